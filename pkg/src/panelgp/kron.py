"""Dense symmetric linear algebra plus Kronecker-product identities.

Conventions used throughout the package:

* ``vec`` is column-stacking: for ``X`` of shape (n, m), ``vec(X)[a*n + b] =
  X[b, a]``. With that convention ``(A kron B) vec(X) = vec(B X A^T)`` for
  ``A`` (m, m) and ``B`` (n, n), so the first Kronecker factor indexes the
  slow axis and the second the fast axis.
* Panel cells are flattened unit-major / time-fast: cell (i, t) sits at flat
  index ``i*T + t``, which pairs with Gram matrices ordered as
  ``K_unit kron K_time`` (and ``... kron K_outcome`` with outcomes fastest).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "CholeskyFactor",
    "cholesky",
    "solve_psd",
    "kron_matvec",
    "kron_chol_sample",
]

#: Relative symmetry tolerance accepted by :func:`cholesky`.
SYMMETRY_RTOL = 1e-12

#: Number of rungs on the adaptive jitter ladder (base * 10**k, k = 0..6).
_JITTER_RUNGS = 7


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix cannot be factorized even at maximum jitter."""


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor C with C @ C.T = K + jitter * I.

    ``jitter`` records the diagonal inflation that was actually applied, so
    downstream solves and logs can report it.
    """

    lower: np.ndarray
    jitter: float

    @property
    def order(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T

    def logdet(self) -> float:
        """Log-determinant of K + jitter*I."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def _check_symmetric(K: np.ndarray) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    scale = max(np.abs(K).max(), 1.0)
    if np.abs(K - K.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric to within 1e-12 relative")
    if not np.all(np.isfinite(K)):
        raise ValueError("matrix has non-finite entries")
    return K


def cholesky(K: np.ndarray, base_jitter: float | None = None) -> CholeskyFactor:
    """Factor K + j*I with the smallest jitter j from an adaptive ladder.

    The ladder is {0, base, base*10, ..., base*1e6}; the first rung that
    yields a successful factorization wins and is reported on the result.
    ``base_jitter`` defaults to 1e-10 * mean(diag(K)).

    Raises
    ------
    FactorizationError
        If even the largest rung fails; the message carries a smallest
        eigenvalue estimate to aid debugging.
    """
    K = _check_symmetric(K)
    n = K.shape[0]
    if base_jitter is None:
        scale = float(np.trace(K)) / n if n else 1.0
        base_jitter = 1e-10 * max(scale, 1e-30)
    if base_jitter < 0:
        raise ValueError("base_jitter must be non-negative")

    ladder = [0.0]
    if base_jitter > 0:
        ladder.extend(base_jitter * 10.0**k for k in range(_JITTER_RUNGS))
    for j in ladder:
        try:
            lower = np.linalg.cholesky(K + j * np.eye(n) if j else K)
        except np.linalg.LinAlgError:
            continue
        return CholeskyFactor(lower=lower, jitter=j)

    eigmin = float(np.linalg.eigvalsh(K)[0])
    raise FactorizationError(
        f"cholesky failed at maximum jitter {ladder[-1]:.3e}; "
        f"smallest eigenvalue estimate {eigmin:.6e}"
    )


def solve_psd(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (K + jitter*I) x = b via two triangular solves."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != factor.order:
        raise ValueError(
            f"rhs has leading dimension {b.shape[0]}, factor order {factor.order}"
        )
    y = solve_triangular(factor.lower, b, lower=True)
    return solve_triangular(factor.lower.T, y, lower=False)


def kron_matvec(A: np.ndarray, B: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Compute (A kron B) @ x without materializing the Kronecker product.

    Uses the vectorization identity ``(A kron B) vec(X) = vec(B X A^T)``
    with column-stacking vec, where ``x = vec(X)`` and X has shape
    (B.shape[0], A.shape[1]).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    x = np.asarray(x, dtype=float)
    m_out, m_in = A.shape
    n_out, n_in = B.shape
    if x.shape != (m_in * n_in,):
        raise ValueError(
            f"x has shape {x.shape}, expected ({m_in * n_in},) for "
            f"A {A.shape} kron B {B.shape}"
        )
    X = x.reshape((n_in, m_in), order="F")
    return (B @ X @ A.T).ravel(order="F")


def kron_chol_sample(
    c_time: CholeskyFactor | np.ndarray,
    loadings: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """Draw from N(0, (beta beta^T) kron (C C^T)) from white noise z.

    ``loadings`` is the N x J unit factor matrix beta and ``z`` has length
    T*J ordered as J blocks of length T. The draw is f_it = sum_j beta_ij
    u_jt with u_j = C_time @ z_j, returned flattened unit-major/time-fast
    (cell (i, t) at index i*T + t). Cost is O(T^2 J + N T J); the NT x NT
    covariance is never formed.
    """
    C = c_time.lower if isinstance(c_time, CholeskyFactor) else np.asarray(c_time)
    loadings = np.atleast_2d(np.asarray(loadings, dtype=float))
    z = np.asarray(z, dtype=float)
    T = C.shape[0]
    J = loadings.shape[1]
    if z.shape != (T * J,):
        raise ValueError(f"z has shape {z.shape}, expected ({T * J},)")
    U = z.reshape(J, T) @ C.T  # row j is u_j
    return (loadings @ U).ravel()
