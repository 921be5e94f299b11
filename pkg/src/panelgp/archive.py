"""Run-directory artifacts: draw archives, manifests, tidy CSV outputs.

A fit produces a self-contained run directory:

    manifest.json        seed, config hash, data fingerprint, version,
                         divergence counts, flags, per-stage timings
    config.json          resolved configuration copy
    data.csv             copy of the input panel
    draws_chain<c>.csv   columnar archive, columns param,iteration,value

Re-running with the same inputs reproduces every artifact bit-exactly;
the manifest fingerprint excludes wall-clock timings so identical runs
compare equal.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pandas as pd

from .sampler import PosteriorDraws

__version__ = "0.1.0"

__all__ = [
    "config_hash",
    "file_fingerprint",
    "write_manifest",
    "read_manifest",
    "manifest_fingerprint",
    "write_draws",
    "read_draws",
]

_FLOAT_FMT = "%.17g"


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def file_fingerprint(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_fingerprint(manifest: dict) -> str:
    """Hash of the deterministic manifest fields (timings excluded)."""
    stable = {k: v for k, v in manifest.items() if k != "timings"}
    return hashlib.sha256(
        json.dumps(stable, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def write_manifest(run_dir, manifest: dict) -> Path:
    path = Path(run_dir) / "manifest.json"
    manifest = dict(manifest, fingerprint=manifest_fingerprint(manifest))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text())


def write_draws(run_dir, draws: PosteriorDraws) -> list:
    """Write one columnar CSV per chain: param,iteration,value."""
    run_dir = Path(run_dir)
    names = list(draws.param_names) or [f"theta[{k}]" for k in range(draws.dim)]
    paths = []
    for c in range(draws.n_chains):
        frame = pd.DataFrame(
            {
                "param": np.repeat(names, draws.n_iters),
                "iteration": np.tile(np.arange(draws.n_iters), draws.dim),
                "value": draws.draws[c].T.ravel(),
            }
        )
        path = run_dir / f"draws_chain{c}.csv"
        frame.to_csv(path, index=False, float_format=_FLOAT_FMT)
        paths.append(path)
    return paths


def read_draws(run_dir, manifest: dict | None = None) -> PosteriorDraws:
    """Reassemble a PosteriorDraws from the per-chain CSV archive."""
    run_dir = Path(run_dir)
    manifest = manifest or read_manifest(run_dir)
    chains = []
    names: list | None = None
    for c in range(int(manifest["n_chains"])):
        frame = pd.read_csv(run_dir / f"draws_chain{c}.csv")
        if names is None:
            names = list(dict.fromkeys(frame["param"]))
        n_iters = int(frame["iteration"].max()) + 1
        mat = np.empty((n_iters, len(names)))
        for k, name in enumerate(names):
            block = frame[frame["param"] == name]
            mat[block["iteration"].to_numpy(), k] = block["value"].to_numpy()
        chains.append(mat)
    draws = np.stack(chains)
    return PosteriorDraws(
        draws=draws,
        divergent=np.zeros(draws.shape[:2], dtype=bool),
        accept_prob=np.full(draws.shape[0], np.nan),
        step_sizes=np.full(draws.shape[0], np.nan),
        inv_metric=np.ones((draws.shape[0], draws.shape[2])),
        warmup_divergences=np.zeros(draws.shape[0], dtype=int),
        seed=int(manifest["seed"]),
        warmup=int(manifest["warmup"]),
        param_names=tuple(names),
        flags=list(manifest.get("flags", [])),
    )


def copy_inputs(run_dir, data_path, config: dict) -> None:
    run_dir = Path(run_dir)
    shutil.copyfile(data_path, run_dir / "data.csv")
    (run_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
