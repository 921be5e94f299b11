"""Command-line pipeline: fit once, post-process many.

MCMC is the expensive step, so ``fit`` writes a self-contained run
directory (draw archive, manifest, input copies) and every other
subcommand re-reads that archive instead of refitting. Outputs are tidy
CSVs plus JSON summaries; plotting is left to external tools.

Exit codes: 0 success, 1 usage or configuration error, 2 the fit carries
convergence flags (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import archive
from .diagnostics import (
    in_time_placebo,
    interval_coverage,
    leave_one_out,
    ppc_imbalance,
    ppc_rmse,
)
from .effects import cost_per_avoided, effect_posterior, multi_outcome_effects
from .fitting import MCMCOptions, fit_panel
from .model import BoundModel, build_model
from .panel import load_panel
from .predict import CounterfactualDraws, impute_counterfactuals
from .scm import fit_scm, scm_gaps
from .weights import marginal_weights

ENV_PREFIX = "PANELGP_"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FLAGGED = 2


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message)


def _env_default(name, fallback=None):
    return os.environ.get(ENV_PREFIX + name.upper(), fallback)


def _load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc


def _panel_from_config(data_path, config):
    kwargs = {}
    if "t0_time" in config:
        kwargs["t0_time"] = config["t0_time"]
    elif "t0_periods" in config:
        kwargs["t0_periods"] = int(config["t0_periods"])
    else:
        raise CliError("config needs t0_time or t0_periods")
    if "treated_unit" not in config:
        raise CliError("config needs treated_unit")
    return load_panel(
        data_path,
        treated_unit=str(config["treated_unit"]),
        outcome_kinds=config.get("outcome_kinds"),
        **kwargs,
    )


def _mcmc_options(config, args) -> MCMCOptions:
    def pick(flag, key, cast, default):
        value = getattr(args, flag, None)
        if value is None:
            value = _env_default(flag)
        if value is None:
            value = config.get(key, default)
        return cast(value)

    return MCMCOptions(
        chains=pick("chains", "chains", int, 4),
        warmup=pick("warmup", "warmup", int, 1000),
        iters=pick("iters", "iters", int, 1000),
        seed=pick("seed", "seed", int, 0),
        path_length=float(config.get("path_length", 1.5)),
        jobs=pick("jobs", "jobs", int, 1),
    )


def _load_run(run_dir):
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise CliError(f"{run_dir} is not a fit run directory (no manifest.json)")
    manifest = archive.read_manifest(run_dir)
    config = _load_config(run_dir / "config.json")
    data = _panel_from_config(run_dir / "data.csv", config)
    spec = build_model(config, data)
    bound = BoundModel(spec, data)
    draws = archive.read_draws(run_dir, manifest)
    return manifest, config, data, spec, bound, draws


def _write_csv(path, frame: pd.DataFrame):
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


# ---------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    config = _load_config(args.config)
    data = _panel_from_config(args.data, config)
    spec = build_model(config, data)
    opts = _mcmc_options(config, args)

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    start = time.perf_counter()
    result = fit_panel(spec, data, opts)
    timings["fit_seconds"] = result.elapsed_seconds
    archive.copy_inputs(run_dir, args.data, config)
    archive.write_draws(run_dir, result.draws)
    timings["total_seconds"] = time.perf_counter() - start
    manifest = {
        "version": archive.__version__,
        "seed": opts.seed,
        "n_chains": opts.chains,
        "warmup": opts.warmup,
        "iters": opts.iters,
        "config_hash": archive.config_hash(config),
        "data_fingerprint": archive.file_fingerprint(args.data),
        "divergences": int(result.draws.divergent.sum()),
        "divergence_rate": result.draws.divergence_rate,
        "max_rhat": None if np.isnan(result.max_rhat) else result.max_rhat,
        "min_bulk_ess": None if np.isnan(result.min_bulk_ess) else result.min_bulk_ess,
        "flags": result.flags,
        "timings": timings,
    }
    archive.write_manifest(run_dir, manifest)
    if opts.chains < 2:
        print("R-hat unavailable with a single chain")
    else:
        print(f"max R-hat {result.max_rhat:.4f}, min bulk ESS {result.min_bulk_ess:.0f}")
    print(f"divergence rate {result.draws.divergence_rate:.2%}")
    print(f"run written to {run_dir}")
    if result.flags:
        for flag in result.flags:
            print(f"FLAG: {flag}", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


def _counterfactuals(run_dir, bound, draws, thin=None) -> CounterfactualDraws:
    return impute_counterfactuals(draws, bound, thin=thin)


def cmd_predict(args) -> int:
    _, _, data, _, bound, draws = _load_run(args.out)
    cf = _counterfactuals(args.out, bound, draws, thin=args.thin)
    rows = []
    for k in range(cf.n_draws):
        for ti, t in enumerate(cf.times):
            for l, name in enumerate(cf.outcome_names):
                rows.append((k, t, name, cf.draws[k, ti, l]))
    frame = pd.DataFrame(rows, columns=["iteration", "time", "outcome", "value"])
    path = _write_csv(Path(args.out) / "counterfactuals.csv", frame)
    print(f"wrote {path} ({cf.n_draws} draws)")
    return EXIT_OK


def cmd_weights(args) -> int:
    _, _, data, spec, bound, draws = _load_run(args.out)
    if spec.likelihood != "gaussian_hetero":
        raise CliError("weights require a Gaussian-family fit")
    results = marginal_weights(draws, bound, thin=args.thin)
    g_rows, l_rows = [], []
    for mw in results:
        target_time = data.time_ids[mw.target[1]]
        s = mw.summary()
        for i, unit in enumerate(mw.unit_ids):
            g_rows.append(
                (target_time, unit, s["gamma_mean"][i], s["gamma_q05"][i], s["gamma_q95"][i])
            )
        for t, tid in enumerate(mw.time_ids):
            l_rows.append(
                (target_time, tid, s["lambda_mean"][t], s["lambda_q05"][t], s["lambda_q95"][t])
            )
    out = Path(args.out)
    _write_csv(out / "weights_gamma.csv", pd.DataFrame(
        g_rows, columns=["target_time", "unit", "gamma_mean", "gamma_q05", "gamma_q95"]))
    _write_csv(out / "weights_lambda.csv", pd.DataFrame(
        l_rows, columns=["target_time", "time", "lambda_mean", "lambda_q05", "lambda_q95"]))
    print(f"wrote weight summaries for {len(results)} targets")
    return EXIT_OK


def cmd_scm(args) -> int:
    config = _load_config(args.config)
    data = _panel_from_config(args.data, config)
    fit = fit_scm(data, outcome=args.outcome if args.outcome is not None else 0)
    gaps = scm_gaps(fit, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "scm_weights.csv", pd.DataFrame(
        {"unit": fit.donor_ids, "weight": fit.donor_weights}))
    _write_csv(out / "scm_gaps.csv", pd.DataFrame(
        {"time": data.time_ids, "gap": gaps}))
    post_gap = float(gaps[data.t0 :].mean())
    summary = {
        "intercept": fit.intercept,
        "pre_rmse": fit.pre_rmse,
        "objective": fit.objective,
        "mean_post_gap": post_gap,
        "n_iterations": fit.n_iterations,
        "support": {u: float(w) for u, w in fit.weights_by_unit().items() if w > 1e-6},
    }
    (out / "scm_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"SCM mean post-period gap {post_gap:+.3f}; support size {len(summary['support'])}")
    return EXIT_OK


def cmd_ppc(args) -> int:
    if args.ranks:
        return _ppc_rank_sweep(args)
    _, _, data, spec, bound, draws = _load_run(args.out)
    out = Path(args.out)
    summary = {}
    if args.stat in ("rmse", "all"):
        res = ppc_rmse(draws, bound, thin=args.thin)
        summary["rmse_p_value"] = res.p_value
        _write_csv(out / "ppc_rmse.csv", pd.DataFrame(
            {"observed_stat": res.observed_stat, "replicated_stat": res.replicated_stat}))
    if args.stat in ("imbalance", "all"):
        res = ppc_imbalance(draws, bound, thin=args.thin)
        summary["imbalance_p_values"] = dict(zip(map(str, res.times), res.p_values.tolist()))
        rows = pd.DataFrame({
            "time": np.repeat(res.times, res.observed_gap.shape[0]),
            "observed_gap": res.observed_gap.T.ravel(),
            "replicated_gap": res.replicated_gap.T.ravel(),
        })
        _write_csv(out / "ppc_imbalance.csv", rows)
    if args.stat in ("coverage", "all"):
        cov = interval_coverage(draws, bound, thin=args.thin)
        summary["coverage"] = {str(k): v for k, v in cov.items()}
    (out / "ppc_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _parse_ranks(text: str):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(r) for r in text.split(",")]


def _ppc_rank_sweep(args) -> int:
    if not (args.data and args.config):
        raise CliError("--ranks sweeps need --data and --config")
    config = _load_config(args.config)
    data = _panel_from_config(args.data, config)
    opts = _mcmc_options(config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rank in _parse_ranks(args.ranks):
        cfg = dict(config, rank=rank)
        spec = build_model(cfg, data)
        result = fit_panel(spec, data, opts.derive("rank", rank))
        res = ppc_rmse(result.draws, result.bound, thin=args.thin)
        rows.append((rank, res.p_value, result.max_rhat, result.draws.divergence_rate))
        print(f"rank {rank}: PPC-RMSE p-value {res.p_value:.3f}")
    frame = pd.DataFrame(rows, columns=["rank", "p_value", "max_rhat", "divergence_rate"])
    _write_csv(out / "ppc_ranks.csv", frame)
    (out / "ppc_ranks.json").write_text(
        json.dumps({str(r): p for r, p, *_ in rows}, indent=2) + "\n")
    return EXIT_OK


def cmd_placebo(args) -> int:
    _, config, data, spec, _, _ = _load_run(args.out)
    if args.placebo_time is not None:
        placebo_t0 = int(np.sum(data.times <= args.placebo_time))
    elif args.placebo_periods is not None:
        placebo_t0 = int(args.placebo_periods)
    else:
        raise CliError("pass --placebo-time or --placebo-periods")
    opts = _mcmc_options(config, args)
    eff = in_time_placebo(spec, data, placebo_t0, opts)
    s = eff.summary()
    per_year = eff.per_year_summary()
    frame = pd.DataFrame({
        "time": per_year["times"],
        "mean": per_year["mean"],
        "lo50": per_year["lo50"], "hi50": per_year["hi50"],
        "lo95": per_year["lo95"], "hi95": per_year["hi95"],
    })
    out = Path(args.out)
    _write_csv(out / "placebo_effects.csv", frame)
    (out / "placebo_summary.json").write_text(json.dumps(s, indent=2) + "\n")
    print(json.dumps(s, indent=2))
    return EXIT_OK


def cmd_loo(args) -> int:
    _, config, data, spec, _, _ = _load_run(args.out)
    opts = _mcmc_options(config, args)
    results = leave_one_out(spec, data, opts, jobs=opts.jobs)
    rows = []
    for unit, eff in sorted(results.items()):
        s = eff.summary()
        rows.append((unit, s["mean"], *s["interval_95"], s["p_negative"]))
    frame = pd.DataFrame(rows, columns=["dropped_unit", "mean", "lo95", "hi95", "p_negative"])
    path = _write_csv(Path(args.out) / "loo_effects.csv", frame)
    print(f"wrote {path} ({len(rows)} refits)")
    return EXIT_OK


def cmd_report(args) -> int:
    _, _, data, spec, bound, draws = _load_run(args.out)
    out = Path(args.out)
    cf = _counterfactuals(args.out, bound, draws, thin=args.thin)
    effects = (
        multi_outcome_effects(cf, data)
        if data.n_outcomes >= 2
        else {data.outcome_names[0]: effect_posterior(cf, data)}
    )
    report = {"effects": {}}
    for name, eff in effects.items():
        report["effects"][name] = eff.summary()
    if args.budget is not None and args.population is not None:
        first = next(iter(effects.values()))
        cost = cost_per_avoided(first, args.budget, args.population)
        report["cost_per_event_avoided"] = cost.summary()
    _write_bands(out, data, bound, draws, cf, thin=args.thin)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    return EXIT_OK


def _write_bands(out, data, bound, draws, cf, thin=None):
    """Band CSVs per outcome: posterior predictive for the treated series."""
    from .diagnostics import _replicate

    treated, t0 = data.treated_unit, data.t0
    y_obs = data.values_as_rates(bound.spec.rate_basis)[treated, :, :]
    pre_reps = np.asarray(
        [rep[treated, :t0, :] for _, rep in _replicate(bound, draws, thin=thin)]
    )  # (n, t0, L)
    for l, name in enumerate(data.outcome_names):
        series = np.concatenate([pre_reps[:, :, l], cf.draws[:, :, l]], axis=1)
        lo50, hi50 = np.quantile(series, [0.25, 0.75], axis=0)
        lo95, hi95 = np.quantile(series, [0.025, 0.975], axis=0)
        frame = pd.DataFrame({
            "time": data.time_ids,
            "obs": y_obs[:, l],
            "mean": series.mean(axis=0),
            "lo50": lo50, "hi50": hi50,
            "lo95": lo95, "hi95": hi95,
        })
        _write_csv(Path(out) / f"bands_{name}.csv", frame)


# ---------------------------------------------------------------- parser


def _add_mcmc_flags(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="panelgp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the MCMC fit and write a run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="impute counterfactuals from a fit run")
    p.add_argument("--out", required=True)
    p.add_argument("--thin", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("weights", help="posterior unit/time weights (Gaussian fits)")
    p.add_argument("--out", required=True)
    p.add_argument("--thin", type=int, default=None)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("scm", help="synthetic-control baseline (standalone)")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--outcome", default=None)
    p.set_defaults(func=cmd_scm)

    p = sub.add_parser("ppc", help="posterior predictive checks")
    p.add_argument("--out", required=True)
    p.add_argument("--stat", choices=["rmse", "imbalance", "coverage", "all"], default="all")
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--ranks", default=None, help="e.g. 0..7: orchestrate fits per rank")
    p.add_argument("--data", default=None)
    p.add_argument("--config", default=None)
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("placebo", help="in-time placebo refit")
    p.add_argument("--out", required=True)
    p.add_argument("--placebo-time", type=float, default=None,
                   help="last pre-treatment time id of the placebo fit")
    p.add_argument("--placebo-periods", type=int, default=None)
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_placebo)

    p = sub.add_parser("loo", help="leave-one-control-out refits")
    p.add_argument("--out", required=True)
    _add_mcmc_flags(p)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("report", help="effect summaries, cost, and plot bands")
    p.add_argument("--out", required=True)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--population", type=float, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
