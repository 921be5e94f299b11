"""Fit orchestration: bind a model, run chains, summarize convergence."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .convergence import bulk_ess, rhat
from .model import BoundModel, ModelSpec
from .panel import PanelDataset
from .sampler import PosteriorDraws, run_chains

__all__ = ["MCMCOptions", "FitResult", "fit_panel"]

RHAT_FLAG_THRESHOLD = 1.05


@dataclass(frozen=True)
class MCMCOptions:
    chains: int = 4
    warmup: int = 1000
    iters: int = 1000
    seed: int = 0
    path_length: float = 1.5
    target_accept: float = 0.8
    jobs: int = 1

    def derive(self, *tags) -> "MCMCOptions":
        """Same options with a seed derived for a named sub-run."""
        mixed = np.random.SeedSequence((self.seed,) + tuple(tags)).generate_state(1)[0]
        return replace(self, seed=int(mixed))


@dataclass
class FitResult:
    spec: ModelSpec
    bound: BoundModel
    draws: PosteriorDraws
    max_rhat: float
    min_bulk_ess: float
    elapsed_seconds: float
    flags: list = field(default_factory=list)

    @property
    def reliable(self) -> bool:
        return not self.flags


def convergence_summary(draws: PosteriorDraws) -> tuple:
    """(max R-hat, min bulk ESS) over every parameter coordinate."""
    if draws.n_chains < 2:
        return float("nan"), float("nan")
    worst_rhat = 1.0
    worst_ess = float("inf")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k in range(draws.dim):
            chains = draws.draws[:, :, k]
            if np.allclose(chains, chains.ravel()[0]):
                continue
            worst_rhat = max(worst_rhat, rhat(chains))
            worst_ess = min(worst_ess, bulk_ess(chains))
    if worst_ess == float("inf"):
        worst_ess = float("nan")
    return float(worst_rhat), float(worst_ess)


def fit_panel(spec: ModelSpec, data: PanelDataset, opts: MCMCOptions | None = None) -> FitResult:
    """Bind the model, run HMC, and attach convergence diagnostics."""
    opts = opts or MCMCOptions()
    bound = BoundModel(spec, data)
    start = time.perf_counter()
    draws = run_chains(
        bound,
        n_chains=opts.chains,
        warmup=opts.warmup,
        iters=opts.iters,
        seed=opts.seed,
        path_length=opts.path_length,
        target_accept=opts.target_accept,
        jobs=opts.jobs,
        param_names=tuple(bound.layout.names()),
    )
    elapsed = time.perf_counter() - start
    max_rhat, min_ess = convergence_summary(draws)
    flags = list(draws.flags)
    if np.isfinite(max_rhat) and max_rhat > RHAT_FLAG_THRESHOLD:
        flags.append(f"max R-hat {max_rhat:.3f} exceeds {RHAT_FLAG_THRESHOLD}")
    return FitResult(
        spec=spec,
        bound=bound,
        draws=draws,
        max_rhat=max_rhat,
        min_bulk_ess=min_ess,
        elapsed_seconds=elapsed,
        flags=flags,
    )
