"""Counterfactual imputation from posterior draws.

Per posterior draw the treated unit's post-treatment control outcomes are
imputed under that draw's hyperparameters (full hierarchical propagation,
never plug-in means):

* Gaussian family: the latent surface is marginalized exactly through the
  multivariate-normal conditional of the GP on the observed mean-model
  residuals, then observation noise is added, so each imputation is a draw
  from the draw's exact posterior predictive.
* Poisson family: the whitened latents already pin down the latent surface
  at every time point, so the missing-cell rates are deterministic per draw
  and only the Poisson observation step is sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import LowRankUnitKernel, OutcomeKernel, SETimeKernel, SeparableKernel, gram
from .kron import FactorizationError, cholesky, solve_psd
from .model import BoundModel, Params
from .sampler import PosteriorDraws, chain_rng

__all__ = ["CounterfactualDraws", "gaussian_conditional", "impute_counterfactuals"]

_PREDICT_STREAM = 0x70726564  # ASCII 'pred'


@dataclass(frozen=True)
class CounterfactualDraws:
    """Imputed treated-unit control outcomes for every post-treatment cell.

    ``draws`` and ``latent_mean`` are (n_draws, T - T0, L) in rate units
    (events per rate basis); ``times`` are the post-treatment time ids.
    """

    draws: np.ndarray
    latent_mean: np.ndarray
    times: tuple
    outcome_names: tuple
    likelihood: str

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def gaussian_conditional(
    K_obs: np.ndarray,
    K_mis: np.ndarray,
    K_obs_mis: np.ndarray,
    sigma2_obs: np.ndarray,
    y_centered: np.ndarray,
    sigma2_mis: np.ndarray | None = None,
):
    """Exact MVN conditional of missing outcomes given observed residuals.

    Returns the posterior predictive mean and covariance

        mu    = K_mis,obs (K_obs + diag(sigma2_obs))^-1 y
        Sigma = (K_mis + diag(sigma2_mis))
                - K_mis,obs (K_obs + diag(sigma2_obs))^-1 K_obs,mis

    with per-cell noise variances on both diagonals (heteroskedastic
    observation models replace the textbook sigma^2 I).
    """
    K_obs = np.asarray(K_obs, dtype=float)
    K_mis = np.asarray(K_mis, dtype=float)
    K_obs_mis = np.asarray(K_obs_mis, dtype=float)
    y_centered = np.asarray(y_centered, dtype=float)
    n_obs = K_obs.shape[0]
    n_mis = K_mis.shape[0]
    if K_obs_mis.shape != (n_obs, n_mis):
        raise ValueError(
            f"K_obs_mis has shape {K_obs_mis.shape}, expected {(n_obs, n_mis)}"
        )
    sigma2_obs = np.broadcast_to(np.asarray(sigma2_obs, dtype=float), (n_obs,))
    if sigma2_mis is None:
        sigma2_mis = np.zeros(n_mis)
    sigma2_mis = np.broadcast_to(np.asarray(sigma2_mis, dtype=float), (n_mis,))

    factor = cholesky(K_obs + np.diag(sigma2_obs))
    mean = K_obs_mis.T @ solve_psd(factor, y_centered)
    cov = (K_mis + np.diag(sigma2_mis)) - K_obs_mis.T @ solve_psd(factor, K_obs_mis)
    cov = 0.5 * (cov + cov.T)
    scale = max(float(np.abs(cov).max()), 1.0)
    eigmin = float(np.linalg.eigvalsh(cov)[0])
    if eigmin < -1e-8 * scale:
        raise FactorizationError(
            f"conditional covariance is not PSD (min eigenvalue {eigmin:.3e})"
        )
    return mean, cov


def draw_kernel(params: Params) -> SeparableKernel | None:
    """Separable kernel implied by one posterior draw; None when rank is 0."""
    if params.beta is None:
        return None
    outcome = None
    if params.outcome_factor is not None and params.outcome_factor.shape[0] > 1:
        outcome = OutcomeKernel(params.outcome_factor)
    alpha = 1.0 if params.alpha_time is None else float(params.alpha_time)
    return SeparableKernel(
        time=SETimeKernel(float(params.rho_time), alpha if alpha > 0 else 1e-12),
        unit=LowRankUnitKernel(params.beta),
        outcome=outcome,
    )


def _noise_variances(bound: BoundModel, params: Params, cells: np.ndarray) -> np.ndarray:
    sigma2 = (params.sigma**2)[cells[:, 2]]
    pop = bound._pop_s[cells[:, 0], cells[:, 1]]
    return sigma2 / pop**bound.spec.hetero_exponent


def _impute_gaussian(bound: BoundModel, params: Params, rng, obs_cells, mis_cells, y_rates):
    m = params.mean_model
    r = (
        y_rates[obs_cells[:, 0], obs_cells[:, 1], obs_cells[:, 2]]
        - m[obs_cells[:, 0], obs_cells[:, 1], obs_cells[:, 2]]
    )
    sigma2_obs = _noise_variances(bound, params, obs_cells)
    sigma2_mis = _noise_variances(bound, params, mis_cells)
    m_mis = m[mis_cells[:, 0], mis_cells[:, 1], mis_cells[:, 2]]
    kernel = draw_kernel(params)
    if kernel is None:  # rank 0: no latent surface to condition on
        mean = m_mis
        cov = np.diag(sigma2_mis)
    else:
        times = bound.data.times
        K_obs = gram(kernel, obs_cells, times=times)
        K_mis = gram(kernel, mis_cells, times=times)
        K_om = gram(kernel, obs_cells, mis_cells, times=times)
        cond_mean, cov = gaussian_conditional(K_obs, K_mis, K_om, sigma2_obs, r, sigma2_mis)
        mean = m_mis + cond_mean
    factor = cholesky(cov, base_jitter=1e-12 * max(float(np.abs(cov).max()), 1e-12))
    draw = mean + factor.lower @ rng.standard_normal(len(mis_cells))
    return draw, mean


def _impute_poisson(bound: BoundModel, params: Params, rng, mis_cells):
    lin = params.linpred[mis_cells[:, 0], mis_cells[:, 1], mis_cells[:, 2]]
    pop = bound._pop_s[mis_cells[:, 0], mis_cells[:, 1]]
    lam = pop * np.exp(lin)
    counts = rng.poisson(lam).astype(float)
    return counts / pop, np.exp(lin)


def impute_counterfactuals(
    draws: PosteriorDraws,
    bound: BoundModel,
    *,
    thin: int | None = None,
    seed: int | None = None,
) -> CounterfactualDraws:
    """Impute Y(0) for the treated unit's post-treatment cells per draw.

    ``thin`` keeps every k-th pooled draw; ``seed`` defaults to the
    sampler's seed and drives per-draw Philox substreams, so the result is
    deterministic and draw-parallel.
    """
    data = bound.data
    mis_cells = data.imputation_cells()
    pops = data.populations[mis_cells[:, 0], mis_cells[:, 1]]
    if not np.all(np.isfinite(pops) & (pops > 0)):
        raise ValueError("populations are required at every imputation cell")
    obs_cells = data.control_cells()
    y_rates = np.nan_to_num(data.values_as_rates(bound.spec.rate_basis), nan=0.0)

    flat = draws.flat()
    if thin and thin > 1:
        flat = flat[::thin]
    seed = draws.seed if seed is None else seed

    n_post = data.n_times - data.t0
    L = data.n_outcomes
    out = np.empty((len(flat), n_post, L))
    latent = np.empty_like(out)
    for k, theta in enumerate(flat):
        params = bound.unpack(theta)
        rng = chain_rng(seed, _PREDICT_STREAM, k)
        if bound.spec.likelihood == "poisson":
            vals, lat = _impute_poisson(bound, params, rng, mis_cells)
        else:
            vals, lat = _impute_gaussian(
                bound, params, rng, obs_cells, mis_cells, y_rates
            )
        # mis_cells are ordered time-major then outcome (argwhere order)
        out[k] = vals.reshape(n_post, L)
        latent[k] = lat.reshape(n_post, L)
    return CounterfactualDraws(
        draws=out,
        latent_mean=latent,
        times=tuple(data.time_ids[data.t0 :]),
        outcome_names=data.outcome_names,
        likelihood=bound.spec.likelihood,
    )
