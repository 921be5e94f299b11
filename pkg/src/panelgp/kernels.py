"""Kernel functions and Gram matrices for time, unit, and outcome similarity.

The panel covariance is separable: k((i,t,l), (i',t',l')) =
k_unit(i,i') * k_time(t,t') * k_outcome(l,l'). The time kernel is squared
exponential with the lengthscale in squared time units, k(t,t') =
amplitude^2 * exp(-(t-t')^2 / (2*lengthscale)); the InvGamma(5,5) default
prior in the model module is calibrated to exactly this parameterization,
so it is kept verbatim rather than the more common 2*rho^2 form. The unit
kernel is the low-rank factor form beta @ beta.T and carries no separate
amplitude (scale lives in beta); the outcome kernel is a free full-rank
factor Z @ Z.T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kron import cholesky

__all__ = [
    "SETimeKernel",
    "IdentityTimeKernel",
    "LowRankUnitKernel",
    "OutcomeKernel",
    "SeparableKernel",
    "se_eval",
    "gram",
]


@dataclass(frozen=True)
class SETimeKernel:
    """Squared-exponential time kernel; lengthscale in squared time units."""

    lengthscale: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")

    def matrix(self, times_a: np.ndarray, times_b: np.ndarray | None = None) -> np.ndarray:
        """Gram matrix of kernel values over numeric time ids."""
        ta = np.asarray(times_a, dtype=float)
        tb = ta if times_b is None else np.asarray(times_b, dtype=float)
        d2 = (ta[:, None] - tb[None, :]) ** 2
        return self.amplitude**2 * np.exp(-d2 / (2.0 * self.lengthscale))


@dataclass(frozen=True)
class IdentityTimeKernel:
    """Exact identity time kernel: no smoothness across time periods.

    The linear-factor-model limit; any object exposing ``matrix(times_a,
    times_b)`` works as a time kernel, this one makes the limit exact
    instead of approximating it with a tiny SE lengthscale.
    """

    amplitude: float = 1.0

    def matrix(self, times_a: np.ndarray, times_b: np.ndarray | None = None) -> np.ndarray:
        ta = np.asarray(times_a, dtype=float)
        tb = ta if times_b is None else np.asarray(times_b, dtype=float)
        return self.amplitude**2 * (ta[:, None] == tb[None, :]).astype(float)


@dataclass(frozen=True)
class LowRankUnitKernel:
    """Unit kernel K_unit = loadings @ loadings.T with rank <= J."""

    loadings: np.ndarray  # shape (N, J)

    def __post_init__(self):
        loadings = np.atleast_2d(np.asarray(self.loadings, dtype=float))
        object.__setattr__(self, "loadings", loadings)
        if loadings.ndim != 2:
            raise ValueError("loadings must be a 2-D array")

    @property
    def n_units(self) -> int:
        return self.loadings.shape[0]

    @property
    def rank(self) -> int:
        return self.loadings.shape[1]

    def matrix(self) -> np.ndarray:
        return self.loadings @ self.loadings.T

    @classmethod
    def identity(cls, n_units: int) -> "LowRankUnitKernel":
        return cls(np.eye(n_units))


@dataclass(frozen=True)
class OutcomeKernel:
    """Outcome kernel K_outcome = factor @ factor.T; full rank allowed."""

    factor: np.ndarray  # shape (L, L)

    def __post_init__(self):
        factor = np.atleast_2d(np.asarray(self.factor, dtype=float))
        object.__setattr__(self, "factor", factor)

    @property
    def n_outcomes(self) -> int:
        return self.factor.shape[0]

    def matrix(self) -> np.ndarray:
        return self.factor @ self.factor.T


@dataclass(frozen=True)
class SeparableKernel:
    """Product kernel over (unit, time[, outcome]) cells."""

    time: SETimeKernel
    unit: LowRankUnitKernel
    outcome: OutcomeKernel | None = None

    @property
    def n_outcomes(self) -> int:
        return 1 if self.outcome is None else self.outcome.n_outcomes

    def outcome_matrix(self) -> np.ndarray:
        if self.outcome is None:
            return np.ones((1, 1))
        return self.outcome.matrix()


def se_eval(kernel: SETimeKernel, t: float, t_prime: float) -> float:
    """Scalar squared-exponential evaluation amplitude^2 * exp(-(t-t')^2/(2*rho))."""
    d2 = (float(t) - float(t_prime)) ** 2
    return kernel.amplitude**2 * float(np.exp(-d2 / (2.0 * kernel.lengthscale)))


def _as_cells(cells: np.ndarray) -> np.ndarray:
    cells = np.asarray(cells, dtype=int)
    if cells.ndim == 1:
        cells = cells[None, :]
    if cells.shape[1] == 2:  # single-outcome shorthand (unit, time)
        cells = np.column_stack([cells, np.zeros(len(cells), dtype=int)])
    if cells.shape[1] != 3:
        raise ValueError("cells must be (n, 3) arrays of (unit, time, outcome) indices")
    return cells


def gram(
    kernel: SeparableKernel,
    cells_a: np.ndarray,
    cells_b: np.ndarray | None = None,
    *,
    times: np.ndarray,
) -> np.ndarray:
    """Gram matrix of the separable kernel over two cell index sets.

    ``cells_*`` hold (unit, time, outcome) integer index triples; ``times``
    maps time indices to numeric time ids so irregular sampling works.
    Entry (a, b) is k_unit(i_a, i_b) * k_time(t_a, t_b) * k_outcome(l_a, l_b).
    With ``cells_b`` omitted the result is the symmetric Gram of ``cells_a``.
    """
    times = np.asarray(times, dtype=float)
    A = _as_cells(cells_a)
    B = A if cells_b is None else _as_cells(cells_b)
    K_unit = kernel.unit.matrix()
    K_time = kernel.time.matrix(times)
    K_out = kernel.outcome_matrix()
    G = (
        K_unit[np.ix_(A[:, 0], B[:, 0])]
        * K_time[np.ix_(A[:, 1], B[:, 1])]
        * K_out[np.ix_(A[:, 2], B[:, 2])]
    )
    if cells_b is None:
        G = 0.5 * (G + G.T)  # cancel float round-off asymmetry
    return G


def gram_cholesky(kernel: SeparableKernel, cells: np.ndarray, *, times: np.ndarray):
    """Cholesky of a cell-set Gram via the adaptive jitter ladder."""
    return cholesky(gram(kernel, cells, times=times))
