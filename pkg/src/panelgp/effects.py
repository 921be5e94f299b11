"""Causal summaries from counterfactual draws.

Effects are reported in rate units (events per rate basis, 100k persons by
default) and signed: tau_t = Y_1t - Y*_1t(0), so beneficial interventions
on adverse outcomes show up negative. Summaries are deterministic functions
of the draw arrays, so re-summarizing an archive reproduces a report
bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .panel import PanelDataset
from .predict import CounterfactualDraws

__all__ = [
    "EffectPosterior",
    "CostPosterior",
    "effect_posterior",
    "cost_per_avoided",
    "cost_for_tau",
    "multi_outcome_effects",
]


def _prob_negative(draws: np.ndarray) -> float:
    """P(tau < 0) with ties split evenly (tie randomization in expectation)."""
    finite = draws[np.isfinite(draws)]
    if finite.size == 0:
        return math.nan
    return float(((finite < 0).sum() + 0.5 * (finite == 0).sum()) / finite.size)


def _central_interval(draws: np.ndarray, level: float, axis=0):
    tail = (1.0 - level) / 2.0
    return (
        np.quantile(draws, tail, axis=axis),
        np.quantile(draws, 1.0 - tail, axis=axis),
    )


@dataclass(frozen=True)
class EffectPosterior:
    """Per-year and post-period-average treatment effect draws."""

    tau_t: np.ndarray       # (n_draws, n_post), signed, rate units
    tau_avg: np.ndarray     # (n_draws,)
    times: tuple
    outcome: str

    @property
    def n_draws(self) -> int:
        return self.tau_t.shape[0]

    def summary(self) -> dict:
        lo50, hi50 = _central_interval(self.tau_avg, 0.5)
        lo95, hi95 = _central_interval(self.tau_avg, 0.95)
        return {
            "outcome": self.outcome,
            "mean": float(self.tau_avg.mean()),
            "interval_50": (float(lo50), float(hi50)),
            "interval_95": (float(lo95), float(hi95)),
            "p_negative": _prob_negative(self.tau_avg),
        }

    def per_year_summary(self) -> dict:
        lo50, hi50 = _central_interval(self.tau_t, 0.5, axis=0)
        lo95, hi95 = _central_interval(self.tau_t, 0.95, axis=0)
        return {
            "times": self.times,
            "mean": self.tau_t.mean(axis=0),
            "lo50": lo50,
            "hi50": hi50,
            "lo95": lo95,
            "hi95": hi95,
        }


def effect_posterior(
    cf: CounterfactualDraws, data: PanelDataset, outcome=0
) -> EffectPosterior:
    """Per-draw effects tau_t = observed treated outcome minus imputed Y(0).

    Observed treated post-treatment values are converted to rate units so
    counts and rates compare on the same scale. Post-treatment years whose
    observed outcome is absent from the file yield NaN effect draws and are
    excluded from the average.
    """
    if isinstance(outcome, str):
        outcome = data.outcome_names.index(outcome)
    post = slice(data.t0, data.n_times)
    observed = data.treated_post_values()[:, outcome]
    if data.outcome_kinds[outcome] == "count":
        pop = data.scaled_populations()[data.treated_unit, post]
        observed = observed / pop
    tau_t = observed[None, :] - cf.draws[:, :, outcome]
    with np.errstate(invalid="ignore"):
        tau_avg = np.nanmean(tau_t, axis=1)
    return EffectPosterior(
        tau_t=tau_t,
        tau_avg=tau_avg,
        times=cf.times,
        outcome=data.outcome_names[outcome],
    )


@dataclass(frozen=True)
class CostPosterior:
    """Posterior over budget / events avoided; +inf where no events avoided.

    The ratio of a fixed budget to a posterior quantity is heavy tailed, so
    the median is the headline summary; draws with tau >= 0 map to +inf and
    are reported as a separate probability mass.
    """

    cost_draws: np.ndarray
    budget: float
    population: float

    def summary(self) -> dict:
        finite = self.cost_draws[np.isfinite(self.cost_draws)]
        lo95, hi95 = (
            _central_interval(finite, 0.95) if finite.size else (math.nan, math.nan)
        )
        return {
            "budget": self.budget,
            "population": self.population,
            "median": float(np.median(self.cost_draws)),
            "interval_95": (float(lo95), float(hi95)),
            "p_no_events_avoided": float(np.isinf(self.cost_draws).mean()),
        }


def cost_for_tau(
    tau: float, budget: float, population: float, rate_basis: float = 1e5
) -> float:
    """Cost per event avoided for one effect value (rate units, signed)."""
    if tau >= 0:
        return math.inf
    avoided = -tau * population / rate_basis
    return budget / avoided


def cost_per_avoided(
    effect: EffectPosterior,
    budget: float,
    population: float,
    rate_basis: float = 1e5,
) -> CostPosterior:
    """Posterior of annual budget per event avoided.

    Per draw: events avoided = |tau| * population / rate_basis (tau in
    events per rate_basis persons per year); cost = budget / avoided.
    """
    if budget <= 0 or population <= 0:
        raise ValueError("budget and population must be positive")
    tau = effect.tau_avg
    avoided = np.where(tau < 0, -tau * population / rate_basis, 0.0)
    with np.errstate(divide="ignore"):
        cost = np.where(avoided > 0, budget / np.maximum(avoided, 1e-300), np.inf)
    return CostPosterior(cost_draws=cost, budget=budget, population=population)


def multi_outcome_effects(cf: CounterfactualDraws, data: PanelDataset) -> dict:
    """Per-outcome effect posteriors from one joint multi-outcome fit.

    Draw-level alignment across outcomes is preserved (the k-th draw of
    each posterior comes from the same joint posterior draw), so
    cross-outcome correlations survive into downstream summaries.
    """
    if data.n_outcomes < 2:
        raise ValueError("multi_outcome_effects needs a fit with at least 2 outcomes")
    return {
        name: effect_posterior(cf, data, outcome=l)
        for l, name in enumerate(data.outcome_names)
    }
