"""Command-line front end: ``pdmp-limits <subcommand> [--config ...]``.

Exit codes: 0 success, 1 numerical abort, 2 configuration/schema error
(including unknown subcommands), 3 acceptance failure under ``--assert``,
4 constraint violation (e.g. a ladder breaking ``ell_minus*delta_plus -> 0``).
"""
from __future__ import annotations

import argparse
import csv
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ConstraintError, RunConfig, parse_config
from .engine import SimulationAbort, simulate_ensemble
from .experiments import (
    ALL_ORDER,
    Runtime,
    build_level,
    resolve_threads,
    run_experiments,
    summarize,
    write_json,
    write_level_csv,
)
from .limits import NotPSDError, simulate_langevin_ensemble, solve_mean_cov
from .models import ModelError

log = logging.getLogger("pdmp_limits")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_ASSERT, EXIT_CONSTRAINT = 0, 1, 2, 3, 4
SUBCOMMANDS = ("simulate", "deterministic", "mean-cov", "langevin", "lln", "clt", "trace",
               "residual", "compare", "all")


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _level(cfg: RunConfig, index: int):
    levels = cfg.ladder.levels
    return levels[index]


def cmd_simulate(cfg: RunConfig, rt: Runtime, out: Path, level: int) -> list:
    ctx = build_level(cfg, _level(cfg, level))
    ex = cfg.experiment
    rec = simulate_ensemble(ctx.initial, ctx.spec, ex.horizon, ex.dt_out, cfg.seed, np.arange(ex.replicas),
                            dt=ctx.dt, record_u=ctx.spec.has_potential, max_jumps=cfg.solver.max_jumps,
                            times=ctx.times)
    p = ctx.partition.p
    rows = ([int(r), _fmt(t)] + [int(v) for v in rec.theta[i, k]]
            for i, r in enumerate(rec.replicas) for k, t in enumerate(rec.times))
    _write_rows(out / "theta.csv", ["replica", "t"] + [f"theta_{k}" for k in range(p)], rows)
    write_level_csv(out / "levels" / "simulate.csv", ctx, summarize(ctx, rec))
    return ["theta.csv", "levels/simulate.csv"]


def _field_csv(path: Path, times, values, grid):
    header = ["t"] + [f"x={x:.10g}" for x in grid.nodes]
    _write_rows(path, header, ([_fmt(t)] + [_fmt(v) for v in row] for t, row in zip(times, values)))


def cmd_deterministic(cfg: RunConfig, rt: Runtime, out: Path, level: int) -> list:
    ctx = build_level(cfg, _level(cfg, level))
    _field_csv(out / "p.csv", ctx.times, ctx.p_det, ctx.grid)
    files = ["p.csv"]
    if ctx.u_det is not None:
        _field_csv(out / "u.csv", ctx.times, ctx.u_det, ctx.grid)
        files.append("u.csv")
    return files


def cmd_mean_cov(cfg: RunConfig, rt: Runtime, out: Path, level: int) -> list:
    ctx = build_level(cfg, _level(cfg, level))
    so, ex = cfg.solver, cfg.experiment
    stride = max(1, int(round(ex.dt_out / so.dt_cov)))
    g = solve_mean_cov(ctx.spec, ctx.solution, None, None, so.N, ex.horizon, so.dt_cov, store_every=stride)
    d = g.mean.shape[1]
    names = [f"{b}{i}" for b in g.blocks for i in range(1, so.N + 1)]
    _write_rows(out / "mean.csv", ["t"] + names,
                ([_fmt(t)] + [_fmt(v) for v in m] for t, m in zip(g.times, g.mean)))
    _write_rows(out / "cov.csv", ["t"] + [f"R[{a},{b}]" for a in names for b in names],
                ([_fmt(t)] + [_fmt(v) for v in R.ravel()] for t, R in zip(g.times, g.cov)))
    write_json(out / "cov.header.json", {"N": so.N, "basis": "sine", "blocks": list(g.blocks),
                                          "dim": d, "layout": "row-major", "times": g.times.tolist()})
    return ["mean.csv", "cov.csv", "cov.header.json"]


def cmd_langevin(cfg: RunConfig, rt: Runtime, out: Path, level: int) -> list:
    ctx = build_level(cfg, _level(cfg, level))
    so, ex = cfg.solver, cfg.experiment
    ens = simulate_langevin_ensemble(ctx.spec, ctx.solution, so.N, ex.horizon, so.dt_langevin, cfg.seed,
                                     np.arange(ex.langevin_replicas), save_times=ctx.times)
    d = ens.X.shape[-1]
    rows = []
    for k, t in enumerate(ens.times):
        C = np.cov(ens.X[:, k, :], rowvar=False) if ens.X.shape[0] > 1 else np.zeros((d, d))
        rows.append([_fmt(t)] + [_fmt(v) for v in np.atleast_2d(C).ravel()])
    _write_rows(out / "langevin_cov.csv", ["t"] + [f"C[{a},{b}]" for a in range(d) for b in range(d)], rows)
    keep = min(10, ens.X.shape[0])
    _write_rows(out / "langevin_paths.csv", ["replica", "t"] + [f"X{i}" for i in range(d)],
                ([int(ens.replicas[r]), _fmt(t)] + [_fmt(v) for v in ens.X[r, k]]
                 for r in range(keep) for k, t in enumerate(ens.times)))
    return ["langevin_cov.csv", "langevin_paths.csv"]


PIPELINES = {
    "simulate": cmd_simulate,
    "deterministic": cmd_deterministic,
    "mean-cov": cmd_mean_cov,
    "langevin": cmd_langevin,
}


def dispatch(subcommand: str, cfg: RunConfig, threads: int | None = None, out: str | Path | None = None,
             check: bool = False, level: int = -1, overrides: dict | None = None) -> int:
    """Run one subcommand; write outputs and ``manifest.json``; return the exit code."""
    if subcommand not in SUBCOMMANDS:
        print(f"unknown subcommand {subcommand!r}; expected one of {', '.join(SUBCOMMANDS)}", file=sys.stderr)
        return EXIT_CONFIG
    outdir = Path(out if out is not None else cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    code = EXIT_OK
    with Runtime(threads) as rt:
        try:
            if subcommand in PIPELINES:
                files = PIPELINES[subcommand](cfg, rt, outdir, level)
                passed = None
            else:
                names = ALL_ORDER if subcommand == "all" else (subcommand,)
                report = run_experiments(cfg, names, rt, outdir)
                files = ["report.json"] + sorted(str(p.relative_to(outdir)) for p in (outdir / "levels").glob("*.csv"))
                passed = report["passed"]
                for name, exp in report["experiments"].items():
                    for key, c in exp["criteria"].items():
                        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}.{key} = {c['value']} (target {c['target']})")
                if check and not passed:
                    code = EXIT_ASSERT
        except (SimulationAbort, ModelError, NotPSDError, FloatingPointError) as exc:
            print(f"numerical abort: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        threads_used = rt.threads
    manifest = {
        "subcommand": subcommand,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "overrides": overrides or {},
        "threads": threads_used,
        "level": level,
        "outputs": files,
        "acceptance_passed": passed,
        "versions": {"pdmp_limits": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    write_json(outdir / "manifest.json", manifest)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdmp-limits",
                                 description="Simulate spatial PDMPs and check their fluid and Gaussian limits.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS, metavar="subcommand",
                    help="one of: " + ", ".join(SUBCOMMANDS))
    ap.add_argument("--config", help="JSON config file or inline JSON text (defaults if omitted)")
    ap.add_argument("--seed", type=int, help="override the master seed")
    ap.add_argument("--replicas", type=int, help="override every replica count")
    ap.add_argument("--threads", type=int, help="worker processes (fallback: PDMP_LIMITS_THREADS)")
    ap.add_argument("--out", help="output directory (overrides config 'output')")
    ap.add_argument("--level", type=int, default=-1, help="ladder level for single-level subcommands")
    ap.add_argument("--assert", dest="check", action="store_true",
                    help="exit 3 if any acceptance criterion fails")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = parse_config(args.config) if args.config else parse_config({})
        cfg = cfg.with_overrides(args.seed, args.replicas, args.out)
        if args.replicas is not None:
            parse_config(cfg.to_dict())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstraintError as exc:
        print(f"constraint violation: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except OSError as exc:
        print(f"config error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not -len(cfg.ladder.levels) <= args.level < len(cfg.ladder.levels):
        print("config error: --level out of range", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {k: v for k, v in (("seed", args.seed), ("replicas", args.replicas), ("out", args.out)) if v is not None}
    threads = resolve_threads(args.threads)
    overrides["threads"] = threads
    return dispatch(args.subcommand, cfg, threads, cfg.output, args.check, args.level, overrides)


if __name__ == "__main__":
    sys.exit(main())
