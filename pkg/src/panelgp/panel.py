"""Panel ingestion, validation, and the observed/missing cell partition.

Data are long (tidy) CSV only: one row per observed (unit, time, outcome)
cell with columns ``unit,time,outcome,value,population[,cov_*...]``. Cells
absent from the file are masked-missing; sentinel values are never used.
Treatment information (which unit, when) is not part of the file format and
is supplied by the caller.

Cell bookkeeping splits the N x T x L grid three ways:

* control cells: every file-observed cell except the treated unit's
  post-treatment ones — the only cells any model likelihood may touch;
* imputation cells: the treated unit's post-treatment cells for every
  outcome, always (T - T0) * L of them;
* masked cells: file-absent cells outside the treated-post block.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

__all__ = [
    "PanelDataset",
    "ControlIndexSet",
    "PanelValidationError",
    "load_panel",
    "write_panel",
    "split_observed_missing",
]

DEFAULT_SCHEMA = {
    "unit": "unit",
    "time": "time",
    "outcome": "outcome",
    "value": "value",
    "population": "population",
}

COVARIATE_PREFIX = "cov_"


class PanelValidationError(ValueError):
    """Raised when a panel file or constructed dataset violates an invariant."""


@dataclass(frozen=True)
class PanelDataset:
    """Validated N x T x L outcome grid with populations and metadata.

    ``outcomes`` holds NaN at unobserved cells; ``observed`` is the explicit
    mask. ``t0`` counts pre-treatment periods, so times[:t0] are pre and
    times[t0:] are post. Immutable after construction; safe to share across
    threads.
    """

    unit_ids: tuple
    time_ids: tuple
    outcomes: np.ndarray           # (N, T, L) float, NaN where unobserved
    observed: np.ndarray           # (N, T, L) bool
    populations: np.ndarray        # (N, T) float, NaN where unknown
    treated_unit: int
    t0: int
    outcome_names: tuple
    outcome_kinds: tuple           # each 'rate' or 'count'
    covariates: np.ndarray | None = None   # (N, p) time-invariant
    covariate_names: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "outcomes", np.asarray(self.outcomes, dtype=float))
        object.__setattr__(self, "observed", np.asarray(self.observed, dtype=bool))
        object.__setattr__(self, "populations", np.asarray(self.populations, dtype=float))
        if self.covariates is not None:
            object.__setattr__(self, "covariates", np.asarray(self.covariates, dtype=float))
        self._validate()

    # -- shape helpers ---------------------------------------------------
    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_times(self) -> int:
        return len(self.time_ids)

    @property
    def n_outcomes(self) -> int:
        return len(self.outcome_names)

    @property
    def n_covariates(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def times(self) -> np.ndarray:
        """Numeric time ids used directly as kernel inputs."""
        return np.asarray(self.time_ids, dtype=float)

    @property
    def pre_period_mask(self) -> np.ndarray:
        m = np.zeros(self.n_times, dtype=bool)
        m[: self.t0] = True
        return m

    def _validate(self):
        N, T, L = self.n_units, self.n_times, self.n_outcomes
        if N < 2:
            raise PanelValidationError("need at least 2 units")
        if L < 1:
            raise PanelValidationError("need at least one outcome")
        if not 0 < self.t0 < T:
            raise PanelValidationError(f"t0 must be in (0, {T}), got {self.t0}")
        if not 0 <= self.treated_unit < N:
            raise PanelValidationError("treated_unit index out of range")
        if self.outcomes.shape != (N, T, L):
            raise PanelValidationError(
                f"outcomes shape {self.outcomes.shape} != {(N, T, L)}"
            )
        if self.observed.shape != (N, T, L):
            raise PanelValidationError("observed mask shape mismatch")
        if self.populations.shape != (N, T):
            raise PanelValidationError("populations shape mismatch")
        if len(set(self.unit_ids)) != N:
            raise PanelValidationError("duplicate unit ids")
        if list(self.time_ids) != sorted(self.time_ids):
            raise PanelValidationError("time ids must be sorted ascending")
        if len(self.outcome_kinds) != L:
            raise PanelValidationError("outcome_kinds length mismatch")
        for kind in self.outcome_kinds:
            if kind not in ("rate", "count"):
                raise PanelValidationError(f"unknown outcome kind {kind!r}")
        if np.any(self.observed & ~np.isfinite(self.outcomes)):
            raise PanelValidationError("observed cells must have finite values")
        obs_any = self.observed.any(axis=2)
        pops = self.populations[obs_any]
        if np.any(~np.isfinite(pops)) or np.any(pops <= 0):
            raise PanelValidationError(
                "populations must be strictly positive wherever an outcome is observed"
            )
        vals = self.outcomes[self.observed]
        if np.any(vals < 0):
            raise PanelValidationError("outcome values must be non-negative")
        for l, kind in enumerate(self.outcome_kinds):
            if kind == "count":
                v = self.outcomes[:, :, l][self.observed[:, :, l]]
                if np.any(np.abs(v - np.round(v)) > 1e-9):
                    raise PanelValidationError(
                        f"outcome {self.outcome_names[l]!r} is count-typed but has "
                        "non-integer values"
                    )
        if self.covariates is not None and self.covariates.shape[0] != N:
            raise PanelValidationError("covariates row count mismatch")

    # -- cell partition ---------------------------------------------------
    @property
    def treated_post_block(self) -> np.ndarray:
        """(N, T, L) bool mask of the treated unit's post-treatment cells."""
        m = np.zeros_like(self.observed)
        m[self.treated_unit, self.t0 :, :] = True
        return m

    @property
    def control_mask(self) -> np.ndarray:
        """Cells the likelihood may use: observed and not treated-post."""
        return self.observed & ~self.treated_post_block

    def control_cells(self) -> np.ndarray:
        """(n, 3) array of (unit, time, outcome) indices in the control set."""
        return np.argwhere(self.control_mask)

    def imputation_cells(self) -> np.ndarray:
        """(n, 3) array of treated-unit post-treatment cells, all outcomes."""
        return np.argwhere(self.treated_post_block)

    def masked_cells(self) -> np.ndarray:
        """File-absent cells outside the treated-post block."""
        return np.argwhere(~self.observed & ~self.treated_post_block)

    def control_values(self) -> np.ndarray:
        """Outcome grid with every non-control cell set to NaN.

        This is the only value accessor the fitting, prediction, weighting,
        and diagnostic code paths use, which guarantees treated post-period
        outcomes can never leak into a fit.
        """
        out = np.where(self.control_mask, self.outcomes, np.nan)
        return out

    def treated_post_values(self) -> np.ndarray:
        """Observed treated outcomes Y(1) for t > T0, shape (T - t0, L).

        Only effect summaries may call this; NaN where the file lacked rows.
        """
        vals = np.where(
            self.observed[self.treated_unit, self.t0 :, :],
            self.outcomes[self.treated_unit, self.t0 :, :],
            np.nan,
        )
        return vals

    # -- unit conversions ---------------------------------------------------
    def scaled_populations(self, rate_basis: float = 1e5) -> np.ndarray:
        """Populations divided by the rate basis (default persons per 100k)."""
        return self.populations / rate_basis

    def values_as_rates(self, rate_basis: float = 1e5) -> np.ndarray:
        """Outcome grid converted to rates per ``rate_basis`` persons."""
        out = self.outcomes.copy()
        for l, kind in enumerate(self.outcome_kinds):
            if kind == "count":
                out[:, :, l] = out[:, :, l] / self.scaled_populations(rate_basis)
        return out

    def values_as_counts(self, rate_basis: float = 1e5) -> np.ndarray:
        """Outcome grid converted to integer counts (rates are scaled up)."""
        out = self.outcomes.copy()
        for l, kind in enumerate(self.outcome_kinds):
            if kind == "rate":
                out[:, :, l] = np.round(out[:, :, l] * self.scaled_populations(rate_basis))
        return out

    # -- derived panels ----------------------------------------------------
    def with_masked_cells(self, cells: np.ndarray) -> "PanelDataset":
        """Copy with the given (unit, time, outcome) cells marked unobserved."""
        observed = self.observed.copy()
        for i, t, l in np.asarray(cells, dtype=int):
            observed[i, t, l] = False
        return replace(self, observed=observed)

    def without_unit(self, unit: int) -> "PanelDataset":
        """Copy with one control unit masked out entirely."""
        if unit == self.treated_unit:
            raise ValueError("cannot drop the treated unit")
        observed = self.observed.copy()
        observed[unit, :, :] = False
        return replace(self, observed=observed)

    def truncated(self, n_periods: int, t0: int | None = None) -> "PanelDataset":
        """Copy keeping only the first ``n_periods`` time periods."""
        if not 0 < n_periods <= self.n_times:
            raise ValueError("n_periods out of range")
        new_t0 = self.t0 if t0 is None else t0
        return PanelDataset(
            unit_ids=self.unit_ids,
            time_ids=tuple(self.time_ids[:n_periods]),
            outcomes=self.outcomes[:, :n_periods, :],
            observed=self.observed[:, :n_periods, :],
            populations=self.populations[:, :n_periods],
            treated_unit=self.treated_unit,
            t0=new_t0,
            outcome_names=self.outcome_names,
            outcome_kinds=self.outcome_kinds,
            covariates=self.covariates,
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class ControlIndexSet:
    """The control/missing/masked partition of the panel grid."""

    control: np.ndarray      # (n_c, 3) int
    missing: np.ndarray      # (n_m, 3) int, treated post-treatment cells
    masked: np.ndarray       # (n_k, 3) int

    @property
    def sizes(self) -> tuple:
        return (len(self.control), len(self.missing), len(self.masked))


def split_observed_missing(data: PanelDataset) -> ControlIndexSet:
    """Partition the grid into control, imputation, and masked cell sets.

    The control set holds every non-masked cell except the treated unit's
    post-treatment ones; the missing set is always the full treated-post
    block of size (T - T0) * L.
    """
    return ControlIndexSet(
        control=data.control_cells(),
        missing=data.imputation_cells(),
        masked=data.masked_cells(),
    )


def _schema_with_defaults(schema: dict | None) -> dict:
    out = dict(DEFAULT_SCHEMA)
    if schema:
        out.update(schema)
    return out


def load_panel(
    path,
    *,
    treated_unit: str,
    t0_time=None,
    t0_periods: int | None = None,
    outcome_kinds: dict | None = None,
    schema: dict | None = None,
) -> PanelDataset:
    """Load and validate a long-format CSV panel.

    Parameters
    ----------
    path : str or Path
        CSV with header ``unit,time,outcome,value,population`` plus optional
        ``cov_*`` covariate columns. Rows absent from the file become
        masked-missing cells; unbalanced panels are fine.
    treated_unit : str
        Unit id of the single treated unit.
    t0_time, t0_periods
        Exactly one of: the last pre-treatment time id (inclusive), or the
        number of pre-treatment periods.
    outcome_kinds : dict, optional
        Map outcome name -> 'rate' (default) or 'count'.

    Raises
    ------
    PanelValidationError
        On duplicate (unit, time, outcome) rows (with the offending row
        number), non-positive populations, unknown treated unit, or
        time-varying covariates.
    """
    cols = _schema_with_defaults(schema)
    df = pd.read_csv(path)
    for key in ("unit", "time", "outcome", "value", "population"):
        if cols[key] not in df.columns:
            raise PanelValidationError(f"missing required column {cols[key]!r}")
    cov_cols = sorted(c for c in df.columns if c.startswith(COVARIATE_PREFIX))

    units = sorted(df[cols["unit"]].astype(str).unique())
    times = sorted(df[cols["time"]].unique())
    outcomes = sorted(df[cols["outcome"]].astype(str).unique())
    unit_index = {u: i for i, u in enumerate(units)}
    time_index = {t: i for i, t in enumerate(times)}
    outcome_index = {o: i for i, o in enumerate(outcomes)}

    if treated_unit not in unit_index:
        raise PanelValidationError(f"treated unit {treated_unit!r} not found in file")

    if (t0_time is None) == (t0_periods is None):
        raise PanelValidationError("pass exactly one of t0_time or t0_periods")
    if t0_time is not None:
        t0 = int(np.sum(np.asarray(times) <= t0_time))
        if t0 == 0:
            raise PanelValidationError(f"no periods at or before t0_time={t0_time}")
    else:
        t0 = int(t0_periods)

    N, T, L = len(units), len(times), len(outcomes)
    values = np.full((N, T, L), np.nan)
    observed = np.zeros((N, T, L), dtype=bool)
    populations = np.full((N, T), np.nan)
    covariates = np.full((N, len(cov_cols)), np.nan) if cov_cols else None

    seen = {}
    for row_number, row in enumerate(df.itertuples(index=False), start=2):
        rec = dict(zip(df.columns, row))
        i = unit_index[str(rec[cols["unit"]])]
        t = time_index[rec[cols["time"]]]
        l = outcome_index[str(rec[cols["outcome"]])]
        key = (i, t, l)
        if key in seen:
            raise PanelValidationError(
                f"duplicate (unit, time, outcome) row at line {row_number} "
                f"(first seen at line {seen[key]})"
            )
        seen[key] = row_number
        pop = float(rec[cols["population"]])
        if not pop > 0:
            raise PanelValidationError(
                f"non-positive population {pop} at line {row_number}"
            )
        if np.isfinite(populations[i, t]) and populations[i, t] != pop:
            raise PanelValidationError(
                f"conflicting populations for unit {units[i]!r} time {times[t]!r} "
                f"at line {row_number}"
            )
        populations[i, t] = pop
        values[i, t, l] = float(rec[cols["value"]])
        observed[i, t, l] = True
        for k, c in enumerate(cov_cols):
            v = float(rec[c])
            if np.isfinite(covariates[i, k]) and covariates[i, k] != v:
                raise PanelValidationError(
                    f"covariate {c!r} varies over time for unit {units[i]!r} "
                    f"(line {row_number}); only time-invariant covariates are supported"
                )
            covariates[i, k] = v

    kinds = tuple((outcome_kinds or {}).get(o, "rate") for o in outcomes)
    return PanelDataset(
        unit_ids=tuple(units),
        time_ids=tuple(times),
        outcomes=values,
        observed=observed,
        populations=populations,
        treated_unit=unit_index[treated_unit],
        t0=t0,
        outcome_names=tuple(outcomes),
        outcome_kinds=kinds,
        covariates=covariates,
        covariate_names=tuple(cov_cols),
    )


def write_panel(data: PanelDataset, path) -> None:
    """Write the panel back to long CSV (observed cells only)."""
    cov_cols = list(data.covariate_names)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "time", "outcome", "value", "population", *cov_cols])
        for i, t, l in np.argwhere(data.observed):
            row = [
                data.unit_ids[i],
                data.time_ids[t],
                data.outcome_names[l],
                repr(float(data.outcomes[i, t, l])),
                repr(float(data.populations[i, t])),
            ]
            if cov_cols:
                row.extend(repr(float(v)) for v in data.covariates[i])
            writer.writerow(row)
