"""Synthetic control baseline with an intercept shift.

Donor weights solve the simplex-constrained least-squares problem on
de-meaned pre-treatment outcomes,

    min_gamma  sum_{t<=T0} [ (Y_1t - Ybar_1) - sum_j gamma_j (Y_jt - Ybar_j) ]^2
    s.t.       gamma >= 0,  sum gamma = 1,

where Ybar_j is unit j's pre-treatment mean. The intercept then has the
closed form alpha = Ybar_1 - sum_j gamma_j Ybar_j, and the per-period gap
is the weighted difference-in-differences

    tau_t = (Y_1t - Ybar_1) - sum_j gamma_j (Y_jt - Ybar_j).

The solver is Frank-Wolfe with away steps and exact line search (the
objective is quadratic), which terminates with exactly sparse solutions;
vertex ties break lexicographically by donor unit id for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import PanelDataset

__all__ = ["SCMFit", "fit_scm", "scm_gaps"]

MAX_ITERS = 10_000
GAP_TOL = 1e-10
DROP_TOL = 1e-15


@dataclass(frozen=True)
class SCMFit:
    """Simplex donor weights, closed-form intercept, and fit diagnostics."""

    donor_ids: tuple
    donor_weights: np.ndarray     # simplex vector aligned with donor_ids
    intercept: float
    pre_rmse: float
    objective: float
    fw_gap: float
    n_iterations: int
    treated_id: str
    outcome: str

    def weights_by_unit(self) -> dict:
        return dict(zip(self.donor_ids, self.donor_weights))


def _argmin_lexicographic(values: np.ndarray, ids, tol: float = 1e-12) -> int:
    """Index of the minimum, ties broken by the smallest unit id."""
    lo = values.min()
    tied = np.flatnonzero(values <= lo + tol * max(1.0, abs(lo)))
    if len(tied) == 1:
        return int(tied[0])
    return int(min(tied, key=lambda j: str(ids[j])))


def _line_search(A: np.ndarray, resid: np.ndarray, d: np.ndarray, cap: float) -> float:
    """Exact minimizer of ||resid + s * A d||^2 over s in [0, cap]."""
    Ad = A @ d
    denom = float(Ad @ Ad)
    if denom <= 0:
        return cap
    step = -float(resid @ Ad) / denom
    return float(np.clip(step, 0.0, cap))


def fit_scm(data: PanelDataset, outcome=0) -> SCMFit:
    """Fit intercept-shifted synthetic control weights for the treated unit.

    Requires fully observed pre-treatment outcomes for the treated unit and
    every donor, and at least two donors. Deterministic: the solver is
    initialized at the single best donor vertex and all ties break
    lexicographically.
    """
    if isinstance(outcome, str):
        outcome = data.outcome_names.index(outcome)
    rates = data.values_as_rates()
    Y = rates[:, :, outcome]
    pre = slice(0, data.t0)
    donors = [i for i in range(data.n_units) if i != data.treated_unit]
    if len(donors) < 2:
        raise ValueError("synthetic control needs at least 2 donor units")
    obs = data.observed[:, :, outcome]
    if not obs[data.treated_unit, pre].all():
        raise ValueError("treated unit has missing pre-treatment outcomes")
    missing = [data.unit_ids[i] for i in donors if not obs[i, pre].all()]
    if missing:
        raise ValueError(
            f"donors with missing pre-treatment outcomes: {missing}; "
            "drop them before fitting"
        )

    pre_means = Y[:, pre].mean(axis=1)
    b = Y[data.treated_unit, pre] - pre_means[data.treated_unit]
    A = (Y[np.ix_(donors, range(data.t0))] - pre_means[donors][:, None]).T  # (T0, D)
    donor_ids = tuple(data.unit_ids[i] for i in donors)
    D = len(donors)

    sq_dist = ((A - b[:, None]) ** 2).sum(axis=0)
    gamma = np.zeros(D)
    gamma[_argmin_lexicographic(sq_dist, donor_ids)] = 1.0

    scale = max(1.0, float(b @ b))
    fw_gap = np.inf
    it = 0
    for it in range(1, MAX_ITERS + 1):
        resid = A @ gamma - b
        grad = 2.0 * (A.T @ resid)
        s = _argmin_lexicographic(grad, donor_ids)
        fw_gap = float(grad @ gamma - grad[s])
        if fw_gap <= GAP_TOL * scale:
            break
        active = np.flatnonzero(gamma > 0)
        v = active[_argmin_lexicographic(-grad[active], [donor_ids[j] for j in active])]
        fw_decrease = grad[s] - float(grad @ gamma)
        away_decrease = float(grad @ gamma) - grad[v]
        if fw_decrease <= away_decrease or len(active) == D:
            d = -gamma.copy()
            d[s] += 1.0
            cap = 1.0
        else:
            d = gamma.copy()
            d[v] -= 1.0
            cap = gamma[v] / (1.0 - gamma[v]) if gamma[v] < 1.0 else 0.0
        step = _line_search(A, resid, d, cap)
        if step <= 0:
            break
        gamma = gamma + step * d
        gamma[gamma < DROP_TOL] = 0.0
        gamma = np.maximum(gamma, 0.0)
        gamma /= gamma.sum()

    resid = A @ gamma - b
    objective = float(resid @ resid)
    intercept = float(pre_means[data.treated_unit] - gamma @ pre_means[donors])
    return SCMFit(
        donor_ids=donor_ids,
        donor_weights=gamma,
        intercept=intercept,
        pre_rmse=float(np.sqrt(objective / data.t0)),
        objective=objective,
        fw_gap=fw_gap,
        n_iterations=it,
        treated_id=data.unit_ids[data.treated_unit],
        outcome=data.outcome_names[outcome],
    )


def scm_gaps(fit: SCMFit, data: PanelDataset) -> np.ndarray:
    """Per-period gap series tau_t for every time point, pre and post.

    tau_t = (Y_1t - Ybar_1) - sum_j gamma_j (Y_jt - Ybar_j), the weighted
    difference-in-differences form; pre-treatment gaps are the placebo
    residuals of the fit.
    """
    outcome = data.outcome_names.index(fit.outcome)
    rates = data.values_as_rates()
    Y = rates[:, :, outcome]
    pre = slice(0, data.t0)
    pre_means = Y[:, pre].mean(axis=1)
    donors = [data.unit_ids.index(u) for u in fit.donor_ids]
    treated = data.treated_unit
    demeaned = Y - pre_means[:, None]
    return demeaned[treated] - fit.donor_weights @ demeaned[donors]
