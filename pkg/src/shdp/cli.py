"""Command line interface.

Subcommands: pair, sweep, timeseries, fit, check.  Every run resolves its
configuration from flags, an optional --config JSON file (flags win), and
per-command defaults; the resolved values, seed, timing, output paths, and
skip/collapse counters land in a manifest JSON next to the data output.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .constraint import expectation_gap, sample_constrained_child, _aggregated_all
from .corpus import load_corpus_json, spectral_embed, synthetic_corpus
from .measures import DiscreteMeasure, floor_weights, sample_gem, sticks_to_weights
from .measures import sample_child_sticks
from .rng import RngStream
from .scenarios import (
    ScenarioConfig,
    fit_corpus,
    generate_timeseries_truth,
    run_bound_sweep,
    run_pair_comparison,
    run_timeseries_recovery,
)

CONSTRAINT_CHECK_TOL = 1e-8


@dataclass
class RunManifest:
    """Record of one CLI run; written on success and on failure alike."""

    command: str
    config: dict
    seed: int
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    status: str = "running"
    error: str = ""
    version: str = __version__
    threads: int = 1

    def write(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _write_rows(path: Path, header: list[str], rows: list[list], fmt: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        payload = [
            {
                k: (None if isinstance(v, float) and math.isnan(v) else
                    bool(v) if isinstance(v, (bool, np.bool_)) else
                    int(v) if isinstance(v, (int, np.integer)) else
                    None if v is None else float(v))
                for k, v in zip(header, row)
            }
            for row in rows
        ]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])


# flag name -> ScenarioConfig field
_CFG_FIELDS = {
    "gamma": "gamma",
    "alpha": "alpha",
    "bound": "bound",
    "truncation": "K",
    "epsilon": "epsilon",
    "repeats": "repeats",
    "phases": "phases",
    "obs": "obs_per_phase",
    "noise_shape": "noise_shape",
    "noise_rate": "noise_rate",
    "particles": "particles",
    "sweeps": "sweeps",
    "seed": "seed",
    "dim": "embed_dim",
    "similarity": "similarity_mode",
}


def _resolve_config(args, parser, defaults: dict) -> ScenarioConfig:
    """Merge flag values, --config file entries, and per-command defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read --config {args.config}: {exc}")
        if not isinstance(file_cfg, dict):
            parser.error(f"--config {args.config} must hold a JSON object")
        unknown = set(file_cfg) - set(_CFG_FIELDS)
        if unknown:
            parser.error(f"--config has unknown keys: {sorted(unknown)}")
    values = {}
    for flag, fieldname in _CFG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is None:
            v = file_cfg.get(flag, defaults.get(flag))
        if v is not None:
            values[fieldname] = v
    try:
        return ScenarioConfig(**values)
    except ValueError as exc:
        parser.error(str(exc))


def _finish(manifest: RunManifest, manifest_path: Path, status: str, error: str = "") -> None:
    manifest.status = status
    manifest.error = error
    manifest.finished = _now()
    manifest.write(manifest_path)


def cmd_pair(args, parser) -> int:
    cfg = _resolve_config(args, parser, {"gamma": 5.0, "alpha": 1.0, "bound": 3.0,
                                         "truncation": 100, "repeats": 1000, "seed": 42})
    out = Path(args.out)
    manifest_path = out.with_suffix(".manifest.json")
    manifest = RunManifest("pair", _cfg_dict(cfg), cfg.seed, _now(), threads=args.threads)
    try:
        res = run_pair_comparison(cfg, threads=args.threads)
        rows = [
            [r, res.kl_shdp[r], res.kl_hdp[r], bool(res.skipped[r])]
            for r in range(cfg.repeats)
        ]
        _write_rows(out, ["repeat", "kl_shdp", "kl_hdp", "skipped"], rows, args.format)
        manifest.outputs.append(str(out))
        manifest.counters["skipped"] = int(res.skipped.sum())
        mean_s = float(np.nanmean(res.kl_shdp))
        mean_h = float(res.kl_hdp.mean())
        print(f"pair: mean KL shdp={mean_s:.4f} hdp={mean_h:.4f} "
              f"skipped={int(res.skipped.sum())}/{cfg.repeats}")
        _finish(manifest, manifest_path, "ok")
        return 0
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit nonzero
        _finish(manifest, manifest_path, "error", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_sweep(args, parser) -> int:
    cfg = _resolve_config(args, parser, {"gamma": 5.0, "alpha": 1.0, "truncation": 100,
                                         "repeats": 100, "seed": 42, "bound": 1.0})
    if args.bound_max < args.bound_min:
        parser.error("--bound-max must be at least --bound-min")
    if args.bound_step <= 0:
        parser.error("--bound-step must be positive")
    n_steps = int(math.floor((args.bound_max - args.bound_min) / args.bound_step + 1e-9)) + 1
    bounds = [args.bound_min + i * args.bound_step for i in range(n_steps)]
    out = Path(args.out)
    manifest_path = out.with_suffix(".manifest.json")
    manifest = RunManifest("sweep", _cfg_dict(cfg) | {"bounds": bounds}, cfg.seed, _now(),
                           threads=args.threads)
    try:
        res = run_bound_sweep(cfg, bounds, threads=args.threads)
        rows = [
            [res.bounds[i], res.mean[i], res.q25[i], res.q50[i], res.q75[i]]
            for i in range(len(bounds))
        ]
        _write_rows(out, ["bound", "mean", "q25", "q50", "q75"], rows, args.format)
        manifest.outputs.append(str(out))
        manifest.counters["skipped"] = int(res.skip_counts.sum())
        print(f"sweep: {len(bounds)} bounds from {bounds[0]:g} to {bounds[-1]:g}; "
              f"mean KL {res.mean[0]:.3f} -> {res.mean[-1]:.3f}")
        _finish(manifest, manifest_path, "ok")
        return 0
    except Exception as exc:  # noqa: BLE001
        _finish(manifest, manifest_path, "error", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_timeseries(args, parser) -> int:
    cfg = _resolve_config(args, parser, {"gamma": 5.0, "alpha": 1.0, "bound": 1.0,
                                         "truncation": 100, "phases": 20, "obs": 50,
                                         "noise_shape": 0.03, "noise_rate": 1.0,
                                         "particles": 1000, "sweeps": 20, "seed": 42})
    out = Path(args.out)
    manifest_path = out.with_suffix(".manifest.json")
    manifest = RunManifest("timeseries", _cfg_dict(cfg), cfg.seed, _now())
    if cfg.particles == 1:
        print("warning: a single particle gives a prior trajectory, no data reweighting",
              file=sys.stderr)
    try:
        root = RngStream(cfg.seed).generator()
        truth = generate_timeseries_truth(cfg, root)
        diag_path = out.with_suffix(".diagnostics.jsonl")
        with open(_ensure_parent(diag_path), "w", encoding="utf-8") as diag:
            res = run_timeseries_recovery(truth, cfg, root, diag_sink=diag)
        rows = []
        for j in range(cfg.phases):
            rows.append([
                j + 1,
                res.succ_kl_smooth[j - 1] if j > 0 else None,
                res.succ_kl_plain[j - 1] if j > 0 else None,
                res.dist_truth_smooth[j],
                res.dist_truth_plain[j],
            ])
        _write_rows(out, ["phase", "succ_kl_shdp", "succ_kl_hdp",
                          "dist_truth_shdp", "dist_truth_hdp"], rows, args.format)
        manifest.outputs += [str(out), str(diag_path)]
        mean_s = float(res.succ_kl_smooth.mean()) if cfg.phases > 1 else float("nan")
        mean_h = float(res.succ_kl_plain.mean()) if cfg.phases > 1 else float("nan")
        print(f"timeseries: mean successive KL shdp={mean_s:.4f} hdp={mean_h:.4f}")
        _finish(manifest, manifest_path, "ok")
        return 0
    except Exception as exc:  # noqa: BLE001
        _finish(manifest, manifest_path, "error", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_fit(args, parser) -> int:
    cfg = _resolve_config(args, parser, {"gamma": 5.0, "alpha": 5.0, "bound": 3.0,
                                         "truncation": 100, "phases": 26, "sweeps": 500,
                                         "particles": 1000, "dim": 12,
                                         "similarity": "overlap-sum", "seed": 42})
    if (args.corpus is None) == (not args.synthetic):
        parser.error("give exactly one of --corpus PATH or --synthetic")
    out_dir = Path(args.out)
    manifest_path = out_dir / "manifest.json"
    manifest = RunManifest("fit", _cfg_dict(cfg) | {"synthetic": bool(args.synthetic),
                                                    "corpus": args.corpus or "",
                                                    "n_docs": args.docs},
                           cfg.seed, _now())
    try:
        root = RngStream(cfg.seed).generator()
        if args.synthetic:
            docs = synthetic_corpus(root, n_docs=args.docs, n_phases=cfg.phases)
        else:
            docs = load_corpus_json(args.corpus)
        embedded = spectral_embed(docs, dim=cfg.embed_dim, mode=cfg.similarity_mode)
        diag_path = out_dir / "diagnostics.jsonl"
        with open(_ensure_parent(diag_path), "w", encoding="utf-8") as diag:
            res = fit_corpus(embedded, cfg, root, diag_sink=diag)
        rows = []
        for j, phase in enumerate(res.phases):
            for rank in range(len(res.top_atoms)):
                rows.append([int(phase), rank + 1,
                             res.traj_smooth[j, rank], res.traj_plain[j, rank]])
        traj_path = out_dir / ("trajectories.json" if args.format == "json" else "trajectories.csv")
        _write_rows(traj_path, ["phase", "atom_rank", "weight_shdp", "weight_hdp"],
                    rows, args.format)
        manifest.outputs += [str(traj_path), str(diag_path)]
        if len(res.succ_kl_smooth):
            print(f"fit: mean successive KL shdp={res.succ_kl_smooth.mean():.4f} "
                  f"hdp={res.succ_kl_plain.mean():.4f} over {len(res.phases)} phases")
        else:
            print(f"fit: single phase, no successive divergences")
        _finish(manifest, manifest_path, "ok")
        return 0
    except Exception as exc:  # noqa: BLE001
        _finish(manifest, manifest_path, "error", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1


def cmd_check(args, parser) -> int:
    """Self-tests: expectation agreement of the two divergences, bound satisfaction."""
    seed = args.seed if args.seed is not None else 42
    grid = [2, 5, 10][: max(1, args.grid_size)]
    rng = RngStream(seed).generator()
    failures = 0
    for gamma, alpha in [(5.0, 1.0), (5.0, 5.0)]:
        for l in grid:
            mean, se = expectation_gap(gamma, alpha, l, 10_000, 100, rng)
            ok = abs(mean) <= 3.0 * se
            failures += not ok
            print(f"[{'PASS' if ok else 'FAIL'}] expectation gap gamma={gamma:g} "
                  f"alpha={alpha:g} l={l}: mean={mean:+.5f} (3se={3*se:.5f})")
    # bound satisfaction on fresh constrained draws
    n_draws, K, bound = args.draws, 100, 3.0
    _, g0_raw = sample_gem(5.0, K, rng)
    g0 = DiscreteMeasure(floor_weights(g0_raw.weights, 1e-5), g0_raw.atom_ids)
    g1 = DiscreteMeasure(
        floor_weights(sticks_to_weights(sample_child_sticks(g0.weights, 1.0, rng)), 1e-5),
        g0.atom_ids,
    )
    worst = -np.inf
    for i in range(n_draws):
        child = sample_constrained_child(g0, g1, 1.0, bound, rng)
        w = child.weights
        if args.inject_violation and i == 0:
            w = w.copy()
            w[0], w[1] = w[1] + 0.5 * w[0], 0.5 * w[0]
            w /= w.sum()
        agg = _aggregated_all(g1.weights, w)[: K - 1]
        worst = max(worst, float(agg.max()))
    ok = worst <= bound + CONSTRAINT_CHECK_TOL
    failures += not ok
    print(f"[{'PASS' if ok else 'FAIL'}] bound satisfaction over {n_draws} draws: "
          f"max aggregated KL={worst:.8f} (bound {bound:g})")
    if failures:
        print(f"check: {failures} FAILED", file=sys.stderr)
        return 1
    print("check: all passed")
    return 0


def _ensure_parent(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _cfg_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["bound"] = d["bound"] if math.isfinite(d["bound"]) else "inf"
    return d


def _add_common(sp, with_out=True):
    sp.add_argument("--seed", type=int, default=None, help="RNG seed (default 42)")
    sp.add_argument("--config", type=str, default=None,
                    help="JSON file with flag-name keys; explicit flags win")
    sp.add_argument("--format", choices=["csv", "json"], default="csv")
    if with_out:
        sp.add_argument("--out", type=str, required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="shdp",
        description="Smoothed hierarchical Dirichlet process experiments",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pair", help="bounded vs unconstrained successor comparison")
    _add_common(sp)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--bound", type=float)
    sp.add_argument("--truncation", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(handler=cmd_pair)

    sp = sub.add_parser("sweep", help="divergence as a function of the bound")
    _add_common(sp)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--truncation", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--bound-min", type=float, default=1.0)
    sp.add_argument("--bound-max", type=float, default=10.0)
    sp.add_argument("--bound-step", type=float, default=1.0)
    sp.add_argument("--threads", type=int, default=1)
    sp.set_defaults(handler=cmd_sweep)

    sp = sub.add_parser("timeseries", help="noisy chain generation and double recovery")
    _add_common(sp)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--bound", type=float)
    sp.add_argument("--truncation", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--phases", type=int)
    sp.add_argument("--obs", type=int)
    sp.add_argument("--noise-shape", dest="noise_shape", type=float)
    sp.add_argument("--noise-rate", dest="noise_rate", type=float)
    sp.add_argument("--particles", type=int)
    sp.add_argument("--sweeps", type=int)
    sp.set_defaults(handler=cmd_timeseries)

    sp = sub.add_parser("fit", help="spectral embedding plus phased mixture fit")
    _add_common(sp)
    sp.add_argument("--corpus", type=str, default=None, help="corpus JSON path")
    sp.add_argument("--synthetic", action="store_true", help="generate a synthetic corpus")
    sp.add_argument("--docs", type=int, default=200, help="documents for --synthetic")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--bound", type=float)
    sp.add_argument("--truncation", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--phases", type=int)
    sp.add_argument("--particles", type=int)
    sp.add_argument("--sweeps", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--similarity", choices=["overlap-sum", "jaccard"])
    sp.set_defaults(handler=cmd_fit)

    sp = sub.add_parser("check", help="run built-in statistical self-tests")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--grid-size", dest="grid_size", type=int, default=3)
    sp.add_argument("--draws", type=int, default=100)
    sp.add_argument("--inject-violation", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(handler=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # validations that argparse cannot express
    if getattr(args, "repeats", None) is not None and args.repeats < 1:
        parser.error("--repeats must be a positive integer")
    if getattr(args, "phases", None) is not None and args.phases < 1:
        parser.error("--phases must be a positive integer")
    if getattr(args, "particles", None) is not None and args.particles < 1:
        parser.error("--particles must be a positive integer")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        parser.error("--threads must be a positive integer")
    return args.handler(args, parser)


if __name__ == "__main__":
    sys.exit(main())
