"""Multitask Gaussian-process panel models for single-treated-unit causal inference.

Fits separable unit/time(/outcome) GP models to panel data, imputes the
treated unit's missing control outcomes from the posterior predictive,
extracts the implied unit and time weights, and ships the model-criticism
suite (posterior predictive checks, coverage, placebos, leave-one-out)
plus an intercept-shifted synthetic-control baseline.
"""

from .archive import __version__
from .convergence import bulk_ess, rhat
from .effects import cost_per_avoided, effect_posterior, multi_outcome_effects
from .fitting import MCMCOptions, fit_panel
from .kernels import (
    IdentityTimeKernel,
    LowRankUnitKernel,
    OutcomeKernel,
    SETimeKernel,
    SeparableKernel,
)
from .model import BoundModel, ModelSpec, PriorConfig, build_model, grad_log_joint, log_joint
from .panel import PanelDataset, load_panel, split_observed_missing, write_panel
from .predict import gaussian_conditional, impute_counterfactuals
from .sampler import PosteriorDraws, run_chains
from .scm import fit_scm, scm_gaps
from .simulate import simulate_panel
from .weights import augmented_estimate, compute_weights, error_bound, marginal_weights

__all__ = [
    "__version__",
    "BoundModel",
    "IdentityTimeKernel",
    "LowRankUnitKernel",
    "MCMCOptions",
    "ModelSpec",
    "OutcomeKernel",
    "PanelDataset",
    "PosteriorDraws",
    "PriorConfig",
    "SETimeKernel",
    "SeparableKernel",
    "augmented_estimate",
    "build_model",
    "bulk_ess",
    "compute_weights",
    "cost_per_avoided",
    "effect_posterior",
    "error_bound",
    "fit_panel",
    "fit_scm",
    "gaussian_conditional",
    "grad_log_joint",
    "impute_counterfactuals",
    "load_panel",
    "log_joint",
    "marginal_weights",
    "multi_outcome_effects",
    "rhat",
    "run_chains",
    "scm_gaps",
    "simulate_panel",
    "split_observed_missing",
    "write_panel",
]
