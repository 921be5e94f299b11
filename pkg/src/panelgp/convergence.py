"""Rank-normalized split R-hat and bulk effective sample size."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import ndtri

__all__ = ["rhat", "bulk_ess", "split_chains", "rank_normalize"]


def split_chains(chains: np.ndarray) -> np.ndarray:
    """Split each chain in half, doubling the chain count."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)


def rank_normalize(chains: np.ndarray) -> np.ndarray:
    """Map pooled draws to normal scores via fractional ranks.

    Uses average ranks with the (r - 3/8) / (S + 1/4) offset before the
    normal quantile transform, applied jointly across chains.
    """
    flat = chains.ravel()
    order = np.argsort(flat, kind="stable")
    ranks = np.empty_like(flat)
    ranks[order] = np.arange(1, flat.size + 1, dtype=float)
    # average ranks over exact ties
    vals, inverse = np.unique(flat, return_inverse=True)
    if vals.size < flat.size:
        sums = np.bincount(inverse, weights=ranks)
        counts = np.bincount(inverse)
        ranks = (sums / counts)[inverse]
    z = ndtri((ranks - 3.0 / 8.0) / (flat.size + 0.25))
    return z.reshape(chains.shape)


def _chains_from(draws, param) -> np.ndarray:
    if hasattr(draws, "chains_for"):
        return np.asarray(draws.chains_for(param), dtype=float)
    return np.asarray(draws, dtype=float)


def _rhat_basic(chains: np.ndarray) -> float:
    m, n = chains.shape
    means = chains.mean(axis=1)
    variances = chains.var(axis=1, ddof=1)
    w = variances.mean()
    b_over_n = means.var(ddof=1)
    var_plus = (n - 1) / n * w + b_over_n
    if w <= 0:
        return 1.0
    return float(np.sqrt(var_plus / w))


def rhat(draws, param=0) -> float:
    """Rank-normalized split R-hat for one parameter.

    Requires at least two chains and four post-warmup draws per chain.
    Constant chains have no variance to compare, so they report 1.0 with a
    zero-variance warning rather than NaN.
    """
    chains = _chains_from(draws, param)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ValueError("rhat needs at least two chains")
    if chains.shape[1] < 4:
        raise ValueError("rhat needs at least four draws per chain")
    if np.allclose(chains, chains.ravel()[0]):
        warnings.warn("zero-variance draws; R-hat undefined, reporting 1.0",
                      RuntimeWarning)
        return 1.0
    z = rank_normalize(split_chains(chains))
    return _rhat_basic(z)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT, lags 0..n-1."""
    n = x.size
    xc = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real
    return acov / n


def _ess_core(chains: np.ndarray) -> float:
    """Effective sample size with Geyer initial-monotone truncation."""
    m, n = chains.shape
    acov = np.stack([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return 0.0

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer pairwise sums: keep while positive, then enforce monotone decay.
    max_pairs = (n - 1) // 2
    tau = 0.0
    prev_pair = np.inf
    used_pairs = 0
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0:
            break
        pair = min(pair, prev_pair)
        tau += pair
        prev_pair = pair
        used_pairs += 1
    if used_pairs == 0:
        tau = rho[0]
    tau = 2.0 * tau - 1.0
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def bulk_ess(draws, param=0) -> float:
    """Rank-normalized bulk effective sample size for one parameter.

    Constant chains carry no information; they report 0.0 with a warning.
    """
    chains = _chains_from(draws, param)
    if chains.ndim != 2 or chains.shape[0] < 1:
        raise ValueError("bulk_ess needs a (chains, iterations) array")
    if chains.shape[1] < 4:
        raise ValueError("bulk_ess needs at least four draws per chain")
    if np.allclose(chains, chains.ravel()[0]):
        warnings.warn("zero-variance draws; ESS reported as 0", RuntimeWarning)
        return 0.0
    z = rank_normalize(split_chains(chains))
    return _ess_core(z)
