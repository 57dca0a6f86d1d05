"""Command line entry point: ``metamdl run | taylor-check | map-check``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import checks, harness
from .errors import ConfigError, MetaMDLError

log = logging.getLogger("metamdl")


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}, sort_keys=True), file=sys.stderr)
    return code


def load_matrix(path: str | Path, repeats: int | None = None, seed: int | None = None):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if repeats is not None:
        raw["repeats"] = repeats
    if seed is not None:
        raw["seed"] = seed
    return harness.ExperimentMatrix.from_dict(raw)


def cmd_run(args) -> int:
    matrix = load_matrix(args.config, args.repeats, args.seed)

    def progress(setup, seed, record):
        status = "diverged" if record.diverged else f"{record.wall_time:.2f}s"
        log.info("%-11s seed=%d %s", setup, seed, status)

    table, runs = harness.run_matrix(matrix, progress=progress)
    harness.emit_results(table, runs, args.out, harness.matrix_config(matrix),
                         save_checkpoints=matrix.save_checkpoints)
    for setup, (mu, sigma) in table.gains.items():
        print(f"{setup:<11} GAIN-mu={mu:+.4f} GAIN-sigma={sigma:+.4f}")
    print(f"wrote {Path(args.out) / 'results.csv'}")
    return 0


def cmd_taylor(args) -> int:
    etas = [float(e) for e in args.eta_sweep.split(",") if e.strip()]
    if len(etas) < 2:
        raise ConfigError("--eta-sweep needs at least two values")
    rows = checks.taylor_sweep(etas, args.instances, args.seed)
    print(f"{'inst':>4} {'eta':>10} {'H_A-H_B':>14} {'eta*dnorm2':>14} {'residual':>11} {'ratio':>7}")
    for r in rows:
        ratio = "" if r.ratio is None else f"{r.ratio:7.3f}"
        print(f"{r.instance:>4} {r.eta:>10.3g} {r.lhs:>14.6e} {r.rhs:>14.6e} {r.residual:>11.3e} {ratio:>7}")
    summary = checks.taylor_summary(rows)
    print(json.dumps(summary, sort_keys=True))
    n = summary["instances"]
    if summary["ratio_ok"] < n or summary["sign_ok"] < n - n // 20:
        return _error("check_failed", f"taylor residual check failed: {summary}", 1)
    return 0


def cmd_map(args) -> int:
    res = checks.map_check(args.cases, args.seed)
    print(json.dumps({"cases": res.cases, "max_error": res.max_error,
                      "seconds": round(res.seconds, 3), "tolerance": res.tolerance}, sort_keys=True))
    if not res.passed:
        return _error("check_failed", f"max error {res.max_error} > {res.tolerance}", 1)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metamdl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment matrix from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("taylor-check", help="residual of the first-order hypothetical-loss expansion")
    p.add_argument("--eta-sweep", default=",".join(str(e) for e in checks.TAYLOR_ETAS))
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_taylor)

    p = sub.add_parser("map-check", help="closed-form MAP vs. grid-search posterior mode")
    p.add_argument("--cases", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_map)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error("config", str(exc), 2)
    except OSError as exc:
        return _error("io", str(exc), 3)
    except MetaMDLError as exc:
        return _error(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
