"""Generative model: priors, mean model, likelihoods, and the log-joint.

The observation model for control cells is

    gaussian_hetero:  y_itl ~ N(mu + nu_il + g_tl + f_itl + eta_l'X_i,
                                sigma_l^2 / P_it^h)
    poisson:          y_itl ~ Pois(P_it * exp(mu + nu_il + g_tl + f_itl
                                               + eta_l'X_i))

where P_it is the population divided by the rate basis (persons per 100k by
default), h is the heteroskedasticity exponent (0.5 default, 1.0 and 0.0
selectable), g is a squared-exponential GP trend shared across units, and
f_itl = sum_{j,m} beta_ij Z_lm u_jmt is the low-rank multitask component
with each latent series u_jm a squared-exponential GP over time. For a
single outcome Z is pinned to 1 and the time kernel carries a free
amplitude; with L >= 2 outcomes the free L x L factor Z absorbs the
amplitude instead.

Everything is parameterized on an unconstrained vector with whitened
(non-centered) latents: u_jm = alpha * C(rho) z_jm with z standard normal
and C the Cholesky factor of the unit-amplitude kernel. Lengthscales and
noise scales are log-transformed with Jacobian terms included, and kernel
amplitudes use the absolute value of a standard-normal draw. The log-joint
sums priors plus the likelihood over control cells only; the treated unit's
post-treatment outcomes never enter.

Gradients are exact algorithmic derivatives of the same code path via JAX
(float64), jitted and cached per model structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402  (needs the x64 flag set first)

from .panel import PanelDataset  # noqa: E402

__all__ = [
    "PriorConfig",
    "ModelSpec",
    "ParameterLayout",
    "Params",
    "BoundModel",
    "build_model",
    "log_joint",
    "grad_log_joint",
]

LOG_2PI = math.log(2.0 * math.pi)

#: Relative diagonal jitter used inside the differentiable kernel Cholesky.
KERNEL_JITTER = 1e-8

LIKELIHOODS = ("gaussian_hetero", "poisson")

#: Hyperparameters that may be frozen to constants via ModelSpec.fixed.
FIXABLE = ("rho_time", "alpha_time", "rho_global", "alpha_global", "sigma", "beta")


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters; defaults follow the standard-normal convention.

    Lengthscales get InvGamma(rho_a, rho_b) priors calibrated to the
    squared-time-unit kernel parameterization; scales (amplitudes, noise)
    are half-normal; everything else is centered normal.
    """

    rho_a: float = 5.0
    rho_b: float = 5.0
    mu_sd: float = 1.0
    alpha_sd: float = 1.0
    beta_sd: float = 1.0
    nu_sd: float = 1.0
    eta_sd: float = 1.0
    sigma_sd: float = 1.0
    outcome_factor_sd: float = 1.0

    def as_dict(self) -> dict:
        return {
            "rho_a": self.rho_a,
            "rho_b": self.rho_b,
            "mu_sd": self.mu_sd,
            "alpha_sd": self.alpha_sd,
            "beta_sd": self.beta_sd,
            "nu_sd": self.nu_sd,
            "eta_sd": self.eta_sd,
            "sigma_sd": self.sigma_sd,
            "outcome_factor_sd": self.outcome_factor_sd,
        }


def _freeze_value(value):
    arr = np.asarray(value, dtype=float)
    return (arr.shape, tuple(arr.ravel().tolist()))


def _thaw_value(frozen):
    shape, flat = frozen
    return np.asarray(flat, dtype=float).reshape(shape)


@dataclass(frozen=True)
class ModelSpec:
    """Validated model configuration; hashable so compiled cores can cache."""

    likelihood: str = "gaussian_hetero"
    rank: int = 1
    unit_intercepts: bool = True
    global_trend: bool = True
    covariates: bool = False
    hetero_exponent: float = 0.5
    rate_basis: float = 1e5
    priors: PriorConfig = field(default_factory=PriorConfig)
    fixed: tuple = ()  # ((name, (shape, flat-values)), ...)

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(
                f"unknown likelihood {self.likelihood!r}; expected one of {LIKELIHOODS}"
            )
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.hetero_exponent not in (0.0, 0.5, 1.0):
            raise ValueError("hetero_exponent must be 0.0, 0.5, or 1.0")
        for name, _ in self.fixed:
            if name not in FIXABLE:
                raise ValueError(f"cannot fix unknown hyperparameter {name!r}")

    def fixed_dict(self) -> dict:
        return {name: _thaw_value(v) for name, v in self.fixed}

    def with_fixed(self, **values) -> "ModelSpec":
        merged = dict(self.fixed)
        merged.update({k: _freeze_value(v) for k, v in values.items()})
        return replace(self, fixed=tuple(sorted(merged.items())))


def build_model(config: dict, data: PanelDataset | None = None) -> ModelSpec:
    """Build a ModelSpec from a plain config mapping.

    Recognized keys: ``likelihood``, ``rank``, ``mean_model`` (sub-keys
    ``unit_intercepts``, ``global_trend``, ``covariates``),
    ``hetero_exponent``, ``rate_basis``, and ``priors`` overrides. When
    ``data`` is given the rank and covariate settings are validated against
    its shape.
    """
    mean_model = config.get("mean_model", {})
    prior_overrides = config.get("priors", {})
    known = set(PriorConfig().as_dict())
    unknown = set(prior_overrides) - known
    if unknown:
        raise ValueError(f"unknown prior overrides: {sorted(unknown)}")
    spec = ModelSpec(
        likelihood=config.get("likelihood", "gaussian_hetero"),
        rank=int(config.get("rank", 1)),
        unit_intercepts=bool(mean_model.get("unit_intercepts", True)),
        global_trend=bool(mean_model.get("global_trend", True)),
        covariates=bool(mean_model.get("covariates", False)),
        hetero_exponent=float(config.get("hetero_exponent", 0.5)),
        rate_basis=float(config.get("rate_basis", 1e5)),
        priors=PriorConfig(**prior_overrides),
    )
    n_units = config.get("n_units")
    if data is not None:
        n_units = data.n_units
        if spec.covariates and data.n_covariates == 0:
            raise ValueError("covariates requested but the panel has none")
    if n_units is not None and spec.rank > n_units:
        raise ValueError(f"rank {spec.rank} exceeds the number of units {n_units}")
    return spec


@dataclass(frozen=True)
class ParameterLayout:
    """Ordered named blocks of the flattened unconstrained state."""

    blocks: tuple  # ((name, shape), ...)

    @property
    def dim(self) -> int:
        return int(sum(np.prod(s, dtype=int) for _, s in self.blocks))

    def slices(self) -> dict:
        out = {}
        offset = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape, dtype=int))
            out[name] = (slice(offset, offset + size), shape)
            offset += size
        return out

    def unpack(self, theta, xp=np) -> dict:
        parts = {}
        for name, (sl, shape) in self.slices().items():
            parts[name] = xp.reshape(theta[sl], shape)
        return parts

    def pack(self, parts: dict) -> np.ndarray:
        theta = np.zeros(self.dim)
        for name, (sl, shape) in self.slices().items():
            theta[sl] = np.asarray(parts[name], dtype=float).ravel()
        return theta

    def names(self) -> list:
        out = []
        for name, shape in self.blocks:
            if shape == (1,) or shape == ():
                out.append(name)
                continue
            for idx in np.ndindex(*shape):
                out.append(f"{name}[{','.join(str(k) for k in idx)}]")
        return out


@dataclass(frozen=True)
class _Structure:
    """Hashable description of a bound model; the jit-compile cache key."""

    n_units: int
    n_times: int
    n_outcomes: int
    rank: int
    n_covariates: int
    likelihood: str
    unit_intercepts: bool
    global_trend: bool
    covariates: bool
    fixed_names: tuple

    @property
    def has_time_amplitude(self) -> bool:
        # With multiple outcomes the free outcome factor absorbs the scale.
        return self.rank >= 1 and self.n_outcomes == 1

    def layout(self) -> ParameterLayout:
        N, T, L, J, p = (
            self.n_units,
            self.n_times,
            self.n_outcomes,
            self.rank,
            self.n_covariates,
        )
        fixed = set(self.fixed_names)
        blocks = [("mu", (1,))]
        if J >= 1:
            if "rho_time" not in fixed:
                blocks.append(("log_rho_time", (1,)))
            if self.has_time_amplitude and "alpha_time" not in fixed:
                blocks.append(("raw_alpha_time", (1,)))
            if "beta" not in fixed:
                blocks.append(("beta", (N, J)))
            blocks.append(("z_unit", (J, L, T)))
        if self.global_trend:
            if "rho_global" not in fixed:
                blocks.append(("log_rho_global", (1,)))
            if "alpha_global" not in fixed:
                blocks.append(("raw_alpha_global", (1,)))
            blocks.append(("z_global", (L, T)))
        if self.unit_intercepts:
            blocks.append(("nu", (N, L)))
        if self.covariates and p > 0:
            blocks.append(("eta", (p, L)))
        if J >= 1 and L >= 2:
            blocks.append(("outcome_factor", (L, L)))
        if self.likelihood == "gaussian_hetero" and "sigma" not in fixed:
            blocks.append(("log_sigma", (L,)))
        return ParameterLayout(blocks=tuple(blocks))


def _se_chol(xp, times, rho):
    """Cholesky of the unit-amplitude SE correlation matrix at lengthscale rho."""
    d2 = (times[:, None] - times[None, :]) ** 2
    K = xp.exp(-d2 / (2.0 * rho)) + KERNEL_JITTER * xp.eye(times.shape[0])
    return xp.linalg.cholesky(K)


def _gammaln(xp):
    if xp is jnp:
        from jax.scipy.special import gammaln

        return gammaln
    from scipy.special import gammaln

    return gammaln


def _constrain(xp, raw: dict, fixed: dict, structure: _Structure, times, X):
    """Map raw unconstrained blocks to constrained model quantities."""
    N, T, L, J, p = (
        structure.n_units,
        structure.n_times,
        structure.n_outcomes,
        structure.rank,
        structure.n_covariates,
    )
    out = {"mu": raw["mu"][0]}
    f = xp.zeros((N, T, L))
    if J >= 1:
        rho_time = (
            fixed["rho_time"]
            if "rho_time" in fixed
            else xp.exp(raw["log_rho_time"][0])
        )
        if not structure.has_time_amplitude:
            alpha_time = xp.asarray(1.0)
        elif "alpha_time" in fixed:
            alpha_time = fixed["alpha_time"]
        else:
            alpha_time = xp.abs(raw["raw_alpha_time"][0])
        beta = fixed["beta"] if "beta" in fixed else raw["beta"]
        C = _se_chol(xp, times, rho_time)
        u = alpha_time * xp.einsum("tk,jmk->jmt", C, raw["z_unit"])
        if L >= 2:
            Z = raw["outcome_factor"]
        else:
            Z = xp.ones((1, 1))
        f = xp.einsum("ij,jmt,lm->itl", beta, u, Z)
        out.update(
            rho_time=rho_time, alpha_time=alpha_time, beta=beta, u=u, outcome_factor=Z
        )
    g = xp.zeros((T, L))
    if structure.global_trend:
        rho_global = (
            fixed["rho_global"]
            if "rho_global" in fixed
            else xp.exp(raw["log_rho_global"][0])
        )
        alpha_global = (
            fixed["alpha_global"]
            if "alpha_global" in fixed
            else xp.abs(raw["raw_alpha_global"][0])
        )
        Cg = _se_chol(xp, times, rho_global)
        g = alpha_global * (Cg @ raw["z_global"].T)  # (T, L)
        out.update(rho_global=rho_global, alpha_global=alpha_global)
    nu = raw["nu"] if structure.unit_intercepts else xp.zeros((N, L))
    linpred = out["mu"] + nu[:, None, :] + g[None, :, :] + f
    if structure.covariates and p > 0:
        linpred = linpred + (X @ raw["eta"])[:, None, :]
        out["eta"] = raw["eta"]
    if structure.likelihood == "gaussian_hetero":
        sigma = (
            fixed["sigma"] * xp.ones((L,))
            if "sigma" in fixed
            else xp.exp(raw["log_sigma"])
        )
        out["sigma"] = sigma
    out.update(g=g, nu=nu, f=f, linpred=linpred)
    return out


def _log_prior(xp, raw: dict, con: dict, structure: _Structure, hyper: dict):
    def normal_sum(x, sd):
        x = xp.asarray(x)
        return -0.5 * xp.sum((x / sd) ** 2) - x.size * (
            xp.log(sd) + 0.5 * LOG_2PI
        )

    def invgamma_with_jacobian(log_rho, a, b):
        # InvGamma(a, b) density in rho plus the log-Jacobian of rho=exp(log_rho)
        lgamma_a = _gammaln(xp)(a)
        return a * xp.log(b) - lgamma_a - a * log_rho - b * xp.exp(-log_rho)

    def halfnormal_with_jacobian(log_s, sd):
        s = xp.exp(log_s)
        return xp.sum(
            0.5 * math.log(2.0 / math.pi)
            - xp.log(sd)
            - 0.5 * (s / sd) ** 2
            + log_s
        )

    lp = normal_sum(raw["mu"], hyper["mu_sd"])
    if "log_rho_time" in raw:
        lp += invgamma_with_jacobian(
            raw["log_rho_time"][0], hyper["rho_a"], hyper["rho_b"]
        )
    if "raw_alpha_time" in raw:
        lp += normal_sum(raw["raw_alpha_time"], hyper["alpha_sd"])
    if "beta" in raw:
        lp += normal_sum(raw["beta"], hyper["beta_sd"])
    if "z_unit" in raw:
        lp += normal_sum(raw["z_unit"], 1.0)
    if "log_rho_global" in raw:
        lp += invgamma_with_jacobian(
            raw["log_rho_global"][0], hyper["rho_a"], hyper["rho_b"]
        )
    if "raw_alpha_global" in raw:
        lp += normal_sum(raw["raw_alpha_global"], hyper["alpha_sd"])
    if "z_global" in raw:
        lp += normal_sum(raw["z_global"], 1.0)
    if "nu" in raw:
        lp += normal_sum(raw["nu"], hyper["nu_sd"])
    if "eta" in raw:
        lp += normal_sum(raw["eta"], hyper["eta_sd"])
    if "outcome_factor" in raw:
        lp += normal_sum(raw["outcome_factor"], hyper["outcome_factor_sd"])
    if "log_sigma" in raw:
        lp += halfnormal_with_jacobian(raw["log_sigma"], hyper["sigma_sd"])
    return lp


def _cell_loglik(xp, con: dict, structure: _Structure, y, pop_s, hyper: dict):
    """Per-cell log-likelihood (N, T, L); caller applies the control mask."""
    linpred = con["linpred"]
    if structure.likelihood == "gaussian_hetero":
        var = (con["sigma"] ** 2)[None, None, :] / (
            pop_s[:, :, None] ** hyper["hetero_exponent"]
        )
        resid = y - linpred
        return -0.5 * (resid**2 / var + xp.log(var) + LOG_2PI)
    log_pop = xp.log(pop_s)[:, :, None]
    lam = pop_s[:, :, None] * xp.exp(linpred)
    return y * (log_pop + linpred) - lam - _gammaln(xp)(y + 1.0)


@lru_cache(maxsize=None)
def _compiled(structure: _Structure):
    layout = structure.layout()

    def logp(theta, y, mask, pop_s, X, times, fixed, hyper):
        raw = layout.unpack(theta, xp=jnp)
        con = _constrain(jnp, raw, fixed, structure, times, X)
        lp = _log_prior(jnp, raw, con, structure, hyper)
        ll = jnp.sum(mask * _cell_loglik(jnp, con, structure, y, pop_s, hyper))
        return lp + ll

    vag = jax.value_and_grad(logp)

    def trajectory(x, p, grad0, step, n_steps, inv_metric, *args):
        """Full leapfrog trajectory fused into one XLA computation.

        Mirrors the generic Python leapfrog exactly: initial half kick,
        n_steps drift/kick pairs with a half kick on the last, stopping
        early (ok=False) on any non-finite evaluation.
        """
        p = p + 0.5 * step * grad0

        def cond(carry):
            i, _, _, _, _, ok = carry
            return (i < n_steps) & ok

        def body(carry):
            i, x, p, _, _, _ = carry
            x1 = x + step * inv_metric * p
            lp1, g1 = vag(x1, *args)
            ok1 = jnp.isfinite(lp1) & jnp.all(jnp.isfinite(g1))
            kick = jnp.where(i == n_steps - 1, 0.5 * step, step)
            p1 = p + kick * g1
            return (i + 1, x1, p1, lp1, g1, ok1)

        init = (
            jnp.asarray(0, dtype=jnp.int64),
            x,
            p,
            jnp.asarray(-jnp.inf, dtype=x.dtype),
            jnp.zeros_like(x),
            jnp.asarray(True),
        )
        _, x, p, lp, g, ok = jax.lax.while_loop(cond, body, init)
        return x, p, lp, g, ok

    grad_fn = jax.grad(logp)

    def hess_diag(theta, *args):
        def hvp_elem(v):
            _, hv = jax.jvp(lambda t: grad_fn(t, *args), (theta,), (v,))
            return hv @ v

        return jax.vmap(hvp_elem)(jnp.eye(theta.shape[0], dtype=theta.dtype))

    return jax.jit(logp), jax.jit(vag), jax.jit(trajectory), jax.jit(hess_diag)


@dataclass(frozen=True)
class Params:
    """Constrained per-draw state unpacked from an unconstrained vector."""

    mu: float
    f: np.ndarray                     # (N, T, L)
    linpred: np.ndarray               # (N, T, L)
    g: np.ndarray                     # (T, L)
    nu: np.ndarray                    # (N, L)
    rho_time: float | None = None
    alpha_time: float | None = None
    beta: np.ndarray | None = None    # (N, J)
    u: np.ndarray | None = None       # (J, L, T), amplitude included
    rho_global: float | None = None
    alpha_global: float | None = None
    eta: np.ndarray | None = None     # (p, L)
    outcome_factor: np.ndarray | None = None  # (L, L)
    sigma: np.ndarray | None = None   # (L,)

    @property
    def mean_model(self) -> np.ndarray:
        """The mean-model surface m = linpred - f, shape (N, T, L)."""
        return self.linpred - self.f


class BoundModel:
    """A ModelSpec bound to a panel: log-joint, gradient, and unpacking.

    Instances are cheap wrappers around a jitted core shared across models
    with the same structure, so refits over many same-shaped panels do not
    recompile.
    """

    def __init__(self, spec: ModelSpec, data: PanelDataset):
        if spec.rank > data.n_units:
            raise ValueError(
                f"rank {spec.rank} exceeds the number of units {data.n_units}"
            )
        if spec.covariates and data.n_covariates == 0:
            raise ValueError("covariates requested but the panel has none")
        self.spec = spec
        self.data = data
        self.structure = _Structure(
            n_units=data.n_units,
            n_times=data.n_times,
            n_outcomes=data.n_outcomes,
            rank=spec.rank,
            n_covariates=data.n_covariates if spec.covariates else 0,
            likelihood=spec.likelihood,
            unit_intercepts=spec.unit_intercepts,
            global_trend=spec.global_trend,
            covariates=spec.covariates,
            fixed_names=tuple(name for name, _ in spec.fixed),
        )
        self.layout = self.structure.layout()

        if spec.likelihood == "poisson":
            y = data.values_as_counts(spec.rate_basis)
        else:
            y = data.values_as_rates(spec.rate_basis)
        mask = data.control_mask
        # Only control cells feed the likelihood; fill the rest so no NaN
        # can reach the gradient.
        self._y = np.where(mask, np.nan_to_num(y, nan=0.0), 0.0)
        self._mask = mask.astype(float)
        pop_s = data.scaled_populations(spec.rate_basis)
        self._pop_s = np.where(np.isfinite(pop_s) & (pop_s > 0), pop_s, 1.0)
        if spec.covariates and data.n_covariates:
            X = np.asarray(data.covariates, dtype=float)
            if not np.all(np.isfinite(X)):
                raise ValueError("covariates must be finite for every unit")
        else:
            X = np.zeros((data.n_units, 0))
        self._X = X
        self._times = data.times
        self._fixed = {k: np.asarray(v) for k, v in spec.fixed_dict().items()}
        self._hyper = dict(spec.priors.as_dict(), hetero_exponent=spec.hetero_exponent)
        self._logp_fn, self._vag_fn, self._traj_fn, self._hess_fn = _compiled(
            self.structure
        )

    # -- LogDensity protocol ------------------------------------------------
    @property
    def dim(self) -> int:
        return self.layout.dim

    def _args(self):
        return (
            self._y,
            self._mask,
            self._pop_s,
            self._X,
            self._times,
            self._fixed,
            self._hyper,
        )

    def log_joint(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        return float(self._logp_fn(theta, *self._args()))

    def logp(self, theta: np.ndarray) -> float:
        return self.log_joint(theta)

    def logp_and_grad(self, theta: np.ndarray):
        value, grad = self._vag_fn(np.asarray(theta, dtype=float), *self._args())
        return float(value), np.asarray(grad)

    def grad_log_joint(self, theta: np.ndarray) -> np.ndarray:
        return self.logp_and_grad(theta)[1]

    def trajectory(self, x, p, grad, step, n_steps, inv_metric):
        """Leapfrog trajectory in one fused call; see sampler for semantics."""
        x, p, lp, g, ok = self._traj_fn(
            x, p, grad, float(step), int(n_steps), inv_metric, *self._args()
        )
        return np.asarray(x), np.asarray(p), float(lp), np.asarray(g), bool(ok)

    def hessian_diag(self, theta: np.ndarray) -> np.ndarray:
        """Diagonal of the log-joint Hessian (negative values = convexity).

        Lets the sampler build a curvature-informed diagonal metric:
        position variances miss stiffness that lives in correlated sums
        (e.g. the intercept/trend/factor decomposition of a tightly pinned
        cell), while the Hessian diagonal sees it.
        """
        return np.asarray(self._hess_fn(np.asarray(theta, dtype=float), *self._args()))

    # -- unpacking and simulation --------------------------------------------
    def unpack(self, theta: np.ndarray) -> Params:
        raw = self.layout.unpack(np.asarray(theta, dtype=float), xp=np)
        con = _constrain(np, raw, self._fixed, self.structure, self._times, self._X)
        known = {f.name for f in Params.__dataclass_fields__.values()}
        return Params(**{k: v for k, v in con.items() if k in known})

    def cell_loglik(self, theta: np.ndarray) -> np.ndarray:
        """Per-cell likelihood contributions, zero outside the control set."""
        raw = self.layout.unpack(np.asarray(theta, dtype=float), xp=np)
        con = _constrain(np, raw, self._fixed, self.structure, self._times, self._X)
        cells = _cell_loglik(np, con, self.structure, self._y, self._pop_s, self._hyper)
        return self._mask * cells

    def mean_rates(self, params: Params) -> np.ndarray:
        """Model-implied mean outcome in rate units, shape (N, T, L)."""
        if self.spec.likelihood == "poisson":
            return np.exp(params.linpred)
        return params.linpred

    def cell_sds(self, params: Params) -> np.ndarray:
        """Observation sd in the model's own data units, shape (N, T, L)."""
        if self.spec.likelihood == "poisson":
            lam = self._pop_s[:, :, None] * np.exp(params.linpred)
            return np.sqrt(lam)
        var = (params.sigma**2)[None, None, :] / (
            self._pop_s[:, :, None] ** self.spec.hetero_exponent
        )
        return np.sqrt(var)

    def sample_observation(self, params: Params, rng: np.random.Generator) -> np.ndarray:
        """Replicated data draw at every cell, in rate units, shape (N, T, L)."""
        if self.spec.likelihood == "poisson":
            lam = self._pop_s[:, :, None] * np.exp(params.linpred)
            counts = rng.poisson(lam).astype(float)
            return counts / self._pop_s[:, :, None]
        noise = rng.standard_normal(params.linpred.shape)
        return params.linpred + self.cell_sds(params) * noise

    def prior_draw(self, rng: np.random.Generator) -> np.ndarray:
        """Unconstrained draw from the prior (generative sampling)."""
        h = self._hyper
        parts = {}
        for name, shape in self.layout.blocks:
            if name.startswith("log_rho"):
                rho = 1.0 / rng.gamma(shape=h["rho_a"], scale=1.0 / h["rho_b"])
                parts[name] = np.log([rho])
            elif name.startswith("raw_alpha"):
                parts[name] = rng.normal(0.0, h["alpha_sd"], size=shape)
            elif name == "log_sigma":
                parts[name] = np.log(np.abs(rng.normal(0.0, h["sigma_sd"], size=shape)))
            elif name == "mu":
                parts[name] = rng.normal(0.0, h["mu_sd"], size=shape)
            elif name == "beta":
                parts[name] = rng.normal(0.0, h["beta_sd"], size=shape)
            elif name == "nu":
                parts[name] = rng.normal(0.0, h["nu_sd"], size=shape)
            elif name == "eta":
                parts[name] = rng.normal(0.0, h["eta_sd"], size=shape)
            elif name == "outcome_factor":
                parts[name] = rng.normal(0.0, h["outcome_factor_sd"], size=shape)
            else:  # whitened latents
                parts[name] = rng.standard_normal(shape)
        return self.layout.pack(parts)

    def initial_position(self, rng: np.random.Generator) -> np.ndarray:
        """Overdispersed chain init on the unconstrained scale."""
        return rng.uniform(-2.0, 2.0, size=self.dim)


def log_joint(theta: np.ndarray, data: PanelDataset, spec: ModelSpec) -> float:
    """Log prior plus control-cell log-likelihood at an unconstrained point."""
    return BoundModel(spec, data).log_joint(theta)


def grad_log_joint(theta: np.ndarray, data: PanelDataset, spec: ModelSpec) -> np.ndarray:
    """Exact gradient of :func:`log_joint` with the same layout as theta."""
    return BoundModel(spec, data).grad_log_joint(theta)
