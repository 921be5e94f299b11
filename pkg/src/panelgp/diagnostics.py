"""Bayesian model criticism: posterior predictive checks, coverage, placebos.

All checks use joint (replicated data, parameter) draws: each posterior
draw's parameters generate one replicated dataset and evaluate both the
observed and replicated statistics, and the posterior predictive p-value is
the fraction of draws where the replicated statistic exceeds the observed
one (ties split evenly).

The pre-treatment fit statistic is

    T(Y, theta) = (1/T0) * sqrt( sum_{t<=T0} (Y_1t - mu_1t(theta))^2 )

with the normalizing 1/T0 outside the square root; the more common
inside-the-root normalization only rescales both statistics and leaves
p-values unchanged.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .effects import EffectPosterior, effect_posterior
from .fitting import FitResult, MCMCOptions, fit_panel
from .model import BoundModel, ModelSpec
from .panel import PanelDataset
from .predict import impute_counterfactuals
from .sampler import PosteriorDraws, chain_rng

__all__ = [
    "PPCResult",
    "ppc_rmse",
    "ppc_imbalance",
    "interval_coverage",
    "in_time_placebo",
    "leave_one_out",
]

_PPC_STREAM = 0x707063  # ASCII 'ppc'


def _p_value(replicated: np.ndarray, observed: np.ndarray) -> float:
    greater = (replicated > observed).sum()
    ties = (replicated == observed).sum()
    return float((greater + 0.5 * ties) / len(replicated))


@dataclass(frozen=True)
class PPCResult:
    """Observed and replicated statistic per draw plus the p-value."""

    observed_stat: np.ndarray
    replicated_stat: np.ndarray
    p_value: float
    statistic: str


def _replicate(bound: BoundModel, draws: PosteriorDraws, thin=None, seed=None):
    """Yield (params, replicated rate grid) per posterior draw."""
    flat = draws.flat()
    if thin and thin > 1:
        flat = flat[::thin]
    seed = draws.seed if seed is None else seed
    for k, theta in enumerate(flat):
        params = bound.unpack(theta)
        rng = chain_rng(seed, _PPC_STREAM, k)
        yield params, bound.sample_observation(params, rng)


def ppc_rmse(
    draws: PosteriorDraws,
    bound: BoundModel,
    outcome: int = 0,
    *,
    thin: int | None = None,
) -> PPCResult:
    """Posterior predictive check of treated-unit pre-treatment fit."""
    data = bound.data
    treated, t0 = data.treated_unit, data.t0
    obs_mask = data.observed[treated, :t0, outcome]
    y_obs = data.values_as_rates(bound.spec.rate_basis)[treated, :t0, outcome]
    n_pre = max(int(obs_mask.sum()), 1)

    obs_stats, rep_stats = [], []
    for params, y_rep in _replicate(bound, draws, thin=thin):
        mu = bound.mean_rates(params)[treated, :t0, outcome]
        obs_sq = np.where(obs_mask, (y_obs - mu) ** 2, 0.0).sum()
        rep_sq = np.where(obs_mask, (y_rep[treated, :t0, outcome] - mu) ** 2, 0.0).sum()
        obs_stats.append(np.sqrt(obs_sq) / n_pre)
        rep_stats.append(np.sqrt(rep_sq) / n_pre)
    obs_stats = np.asarray(obs_stats)
    rep_stats = np.asarray(rep_stats)
    return PPCResult(
        observed_stat=obs_stats,
        replicated_stat=rep_stats,
        p_value=_p_value(rep_stats, obs_stats),
        statistic="pre-treatment RMSE",
    )


@dataclass(frozen=True)
class ImbalanceResult:
    """Per-pre-treatment-year gap distributions and p-values."""

    times: tuple
    observed_gap: np.ndarray    # (n_draws, T0)
    replicated_gap: np.ndarray  # (n_draws, T0)
    p_values: np.ndarray        # (T0,)


def ppc_imbalance(
    draws: PosteriorDraws,
    bound: BoundModel,
    outcome: int = 0,
    *,
    thin: int | None = None,
) -> ImbalanceResult:
    """Gap check per pre-treatment year: Y_1t - mu_1t vs replicated gaps."""
    data = bound.data
    treated, t0 = data.treated_unit, data.t0
    y_obs = data.values_as_rates(bound.spec.rate_basis)[treated, :t0, outcome]

    obs_gaps, rep_gaps = [], []
    for params, y_rep in _replicate(bound, draws, thin=thin):
        mu = bound.mean_rates(params)[treated, :t0, outcome]
        obs_gaps.append(y_obs - mu)
        rep_gaps.append(y_rep[treated, :t0, outcome] - mu)
    obs_gaps = np.asarray(obs_gaps)
    rep_gaps = np.asarray(rep_gaps)
    p = np.array([_p_value(rep_gaps[:, t], obs_gaps[:, t]) for t in range(t0)])
    return ImbalanceResult(
        times=tuple(data.time_ids[:t0]),
        observed_gap=obs_gaps,
        replicated_gap=rep_gaps,
        p_values=p,
    )


def interval_coverage(
    draws: PosteriorDraws,
    bound: BoundModel,
    levels=(0.5, 0.95),
    *,
    thin: int | None = None,
    cells: np.ndarray | None = None,
) -> dict:
    """Empirical coverage of central posterior predictive intervals.

    By default evaluates every observed pre-treatment cell across all
    units; pass ``cells`` to score a held-out subset instead (the values
    are read from the panel, so mask the cells during fitting and score
    them here). Returns {level: fraction covered}.
    """
    data = bound.data
    if cells is None:
        pre = np.zeros_like(data.observed)
        pre[:, : data.t0, :] = True
        cells = np.argwhere(pre & data.observed)
    else:
        cells = np.asarray(cells, dtype=int)
    y = data.values_as_rates(bound.spec.rate_basis)
    y_cells = y[cells[:, 0], cells[:, 1], cells[:, 2]]

    reps = [
        y_rep[cells[:, 0], cells[:, 1], cells[:, 2]]
        for _, y_rep in _replicate(bound, draws, thin=thin)
    ]
    reps = np.asarray(reps)  # (n_draws, n_cells)
    out = {}
    for level in levels:
        tail = (1.0 - level) / 2.0
        lo = np.quantile(reps, tail, axis=0)
        hi = np.quantile(reps, 1.0 - tail, axis=0)
        out[level] = float(np.mean((y_cells >= lo) & (y_cells <= hi)))
    return out


def in_time_placebo(
    spec: ModelSpec,
    data: PanelDataset,
    placebo_t0: int,
    opts: MCMCOptions | None = None,
) -> EffectPosterior:
    """Refit with a fake earlier treatment start and report placebo effects.

    ``placebo_t0`` counts pre-treatment periods and must be smaller than the
    true t0. The panel is truncated at the true treatment time first, so no
    genuinely post-treatment data can enter; the placebo "post" window is
    (placebo_t0, t0].
    """
    if not 0 < placebo_t0 < data.t0:
        raise ValueError(
            f"placebo_t0 must be in (0, {data.t0}), got {placebo_t0}"
        )
    opts = (opts or MCMCOptions()).derive("placebo", placebo_t0)
    truncated = data.truncated(data.t0, t0=placebo_t0)
    result = fit_panel(spec, truncated, opts)
    cf = impute_counterfactuals(result.draws, result.bound)
    return effect_posterior(cf, truncated)


def leave_one_out(
    spec: ModelSpec,
    data: PanelDataset,
    opts: MCMCOptions | None = None,
    *,
    jobs: int = 1,
) -> dict:
    """Refit once per dropped control unit; returns unit id -> EffectPosterior.

    Each refit masks one comparison unit entirely and reuses a seed derived
    from the unit id, so results are keyed deterministically no matter how
    the worker pool schedules them.
    """
    if data.n_units < 3:
        raise ValueError("leave-one-out needs at least 3 units")
    opts = opts or MCMCOptions()
    controls = [i for i in range(data.n_units) if i != data.treated_unit]

    def one(unit: int):
        sub = data.without_unit(unit)
        result = fit_panel(spec, sub, opts.derive("loo", unit))
        cf = impute_counterfactuals(result.draws, result.bound)
        return data.unit_ids[unit], effect_posterior(cf, sub)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(one, controls))
    else:
        pairs = [one(u) for u in controls]
    return dict(pairs)
