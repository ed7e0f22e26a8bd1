"""Command-line front end: ``plaplab {evolve,ensemble,constants,verify}``.

Exit status: 0 on success, 1 when a verified bound row fails, 2 on
configuration, data-integrity or solver errors.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

from . import io
from .bounds import ConstantSet, estimate_constants, verify
from .config import ConfigError, ExperimentConfig, load_config
from .grid import average, lq_norm
from .randomization import EnsembleResult, PathSummary, run_ensemble, sample_initial, sample_weight
from .resolvent import ResolventError
from .semigroup import dissipation_identity_check, evolve

logger = logging.getLogger("plaplab")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

TRAJECTORY_CSV = "trajectory.csv"
ENSEMBLE_CSV = "ensemble_paths.csv"
ENSEMBLE_JSON = "ensemble.json"
CONSTANTS_JSON = "constants.json"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"

TRAJECTORY_COLUMNS = ["step", "time", "mass", "energy", "dissipation", "l1_dev", "l2_dev", "linf_dev"]
ENSEMBLE_COLUMNS = ["seed", "time", "delta_u", "l1_dev", "linf_dev", "l2sq_dev"]


class DataError(RuntimeError):
    """Stale or tampered run data."""


def _steps_for(cfg: ExperimentConfig) -> tuple[float, int]:
    t_end = max(cfg.time.t_grid)
    return t_end, max(1, int(round(cfg.time.m_per_unit_time * t_end)))


def cmd_evolve(cfg: ExperimentConfig) -> int:
    """One deterministic path with seed ``ensemble.base_seed``."""
    out = io.ensure_dir(cfg.out)
    start = time.perf_counter()
    dom, params = cfg.domain(), cfg.flow_params()
    seed = cfg.ensemble.base_seed
    gamma = sample_weight(cfg.weight_model(), dom, seed)
    u0 = sample_initial(cfg.init_model(), dom, seed)
    t_end, m = _steps_for(cfg)
    try:
        traj = evolve(gamma, u0, t_end, m, params)
    except ResolventError as exc:
        raise ResolventError(f"seed {seed}: {exc}", exc.residual, exc.iterations) from exc
    mean0 = average(u0)
    rows = []
    for k, u in enumerate(traj.snapshots):
        dev = u - mean0
        rows.append(
            [k, traj.times[k], traj.mass_ledger[k], traj.energy_ledger[k], traj.dissipation_ledger[k],
             lq_norm(dev, 1), lq_norm(dev, 2), lq_norm(dev, math.inf)]
        )
    io.write_csv(out / TRAJECTORY_CSV, TRAJECTORY_COLUMNS, rows)
    manifest = io.RunManifest("evolve", cfg.config_hash(), io.artifact_version(), step_counts={"steps": m})
    manifest.add_file(out, TRAJECTORY_CSV)
    wanted = sorted({min(m, int(round(t / traj.tau))) for t in [0.0] + list(cfg.time.t_grid)})
    for k in wanted:
        name = f"snapshot_{k:06d}.txt"
        io.write_grid(out / name, traj.snapshots[k])
        manifest.add_file(out, name)
    manifest.write(out)
    io.write_timing(out, "evolve", time.perf_counter() - start)
    if m >= 2:
        print(f"dissipation identity mismatch: {dissipation_identity_check(traj):.6e}")
    print(f"wrote {len(rows)} rows to {out / TRAJECTORY_CSV}")
    return EXIT_OK


def ensemble_to_dict(ens: EnsembleResult, cfg_hash: str) -> dict:
    return {
        "config_hash": cfg_hash,
        "p": ens.p,
        "g1": ens.g1,
        "g2": ens.g2,
        "N": ens.n,
        "seeds": list(ens.seeds),
        "paths": [pth.to_dict() for pth in ens.paths],
    }


def ensemble_from_dict(d: dict) -> EnsembleResult:
    return EnsembleResult(
        seeds=tuple(int(s) for s in d["seeds"]),
        paths=tuple(PathSummary.from_dict(x) for x in d["paths"]),
        p=float(d["p"]),
        g1=float(d["g1"]),
        g2=float(d["g2"]),
    )


def cmd_ensemble(cfg: ExperimentConfig) -> int:
    out = io.ensure_dir(cfg.out)
    start = time.perf_counter()
    t_end, m = _steps_for(cfg)
    ens = run_ensemble(
        cfg.weight_model(), cfg.init_model(), cfg.domain(), cfg.flow_params(), cfg.time.t_grid,
        cfg.time.m_per_unit_time, cfg.ensemble.N, cfg.ensemble.base_seed, threads=cfg.threads,
    )
    rows = []
    for pth in ens.paths:
        for k, t in enumerate(pth.times):
            rows.append([pth.seed, t, pth.delta_u, pth.l1_dev[k], pth.linf_dev[k], pth.l2sq_dev[k]])
    ch = cfg.config_hash()
    io.write_csv(out / ENSEMBLE_CSV, ENSEMBLE_COLUMNS, rows)
    io.write_json(out / ENSEMBLE_JSON, ensemble_to_dict(ens, ch))
    manifest = io.RunManifest("ensemble", ch, io.artifact_version(), step_counts={"steps_per_path": m, "paths": ens.n})
    manifest.add_file(out, ENSEMBLE_CSV)
    manifest.add_file(out, ENSEMBLE_JSON)
    manifest.write(out)
    io.write_timing(out, "ensemble", time.perf_counter() - start)
    print(f"ensemble of {ens.n} paths written to {out}")
    return EXIT_OK


def compute_constants(cfg: ExperimentConfig) -> ConstantSet:
    return estimate_constants(
        cfg.domain(), cfg.flow_params(), delta=cfg.effective_delta(), g1=cfg.weight.g1, n_random=cfg.bounds.n_random_starts
    )


def cmd_constants(cfg: ExperimentConfig) -> int:
    out = io.ensure_dir(cfg.out)
    start = time.perf_counter()
    consts = compute_constants(cfg)
    io.write_json(out / CONSTANTS_JSON, consts.to_dict())
    manifest = io.RunManifest("constants", cfg.config_hash(), io.artifact_version(), constants=consts.to_dict())
    manifest.add_file(out, CONSTANTS_JSON)
    manifest.write(out)
    io.write_timing(out, "constants", time.perf_counter() - start)
    for name, tag in sorted(consts.provenance.items()):
        val = getattr(consts, name)
        shown = "-" if val is None else f"{val:.6g}"
        print(f"{name:<14}{shown:>14}  ({tag})")
    return EXIT_OK


def _load_checked(out: Path, command: str, cfg_hash: str) -> io.RunManifest:
    path = out / io.manifest_name(command)
    if not path.exists():
        raise DataError(f"{path} not found; run '{command}' first")
    manifest = io.RunManifest.read(out, command)
    if manifest.config_hash != cfg_hash:
        raise DataError(f"config hash mismatch for {command} data in {out} (stale data: {manifest.config_hash[:12]} != {cfg_hash[:12]})")
    bad = manifest.verify_files(out)
    if bad:
        raise DataError(f"checksum mismatch for {', '.join(bad)} (files were modified after the run)")
    return manifest


def cmd_verify(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    start = time.perf_counter()
    ch = cfg.config_hash()
    _load_checked(out, "ensemble", ch)
    ens = ensemble_from_dict(io.read_json(out / ENSEMBLE_JSON))
    if (out / io.manifest_name("constants")).exists():
        _load_checked(out, "constants", ch)
        consts = ConstantSet.from_dict(io.read_json(out / CONSTANTS_JSON))
    else:
        consts = compute_constants(cfg)
    report = verify(ens, consts, cfg.domain(), cfg.bound_options())
    io.write_json(out / REPORT_JSON, report.to_dict())
    table = report.table()
    (out / REPORT_TXT).write_text(table + "\n", encoding="utf-8")
    manifest = io.RunManifest("verify", ch, io.artifact_version(), constants=consts.to_dict())
    manifest.add_file(out, REPORT_JSON)
    manifest.add_file(out, REPORT_TXT)
    manifest.write(out)
    io.write_timing(out, "verify", time.perf_counter() - start)
    print(table)
    n_fail = len(report.failures)
    print(f"{n_fail} failing row(s)" if n_fail else "all applicable rows pass")
    return EXIT_FAIL if n_fail else EXIT_OK


COMMANDS = {"evolve": cmd_evolve, "ensemble": cmd_ensemble, "constants": cmd_constants, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="base seed (ensemble.base_seed)")
    common.add_argument("--threads", type=int, metavar="N", help="worker processes for ensemble paths")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = argparse.ArgumentParser(prog="plaplab", description="Weighted p-Laplacian Neumann flow with random weights and data.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("evolve", parents=[common], help="one deterministic path: trajectory CSV and snapshot grids")
    sub.add_parser("ensemble", parents=[common], help="Monte Carlo ensemble: per-path CSV and ensemble JSON")
    sub.add_parser("constants", parents=[common], help="Poincare/embedding constants with provenance tags")
    sub.add_parser("verify", parents=[common], help="check all bounds against a stored ensemble")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out=args.out, threads=args.threads)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (DataError, ResolventError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
