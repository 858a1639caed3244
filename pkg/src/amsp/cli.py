"""``amsp`` command line.

Exit codes: 0 success, 2 parameter error, 3 solver failure, 4 enumeration
guard exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import (
    METHODS, ExperimentConfig, GuardExceeded, ParameterError, cmd_compare_methods, cmd_count_nacs,
    cmd_enumerate_revisions, cmd_solve, cmd_vams_sweep,
)
from .io import save_instance
from .model import InconsistencyError, InstanceError
from .nac import REGIMES
from .problems import PROBLEMS
from .solver_backend import SolverError

EXIT_OK, EXIT_PARAM, EXIT_SOLVER, EXIT_GUARD = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser, methods: bool = True) -> None:
    p.add_argument("--problem", choices=PROBLEMS + ("file",), default="lotsizing")
    p.add_argument("--instance", help="instance JSON (implies --problem file)")
    p.add_argument("-T", type=int, default=4, help="number of stages")
    p.add_argument("-B", type=int, default=2, help="branches per node")
    p.add_argument("-I", type=int, default=1, help="state dimension (lot-sizing sources)")
    p.add_argument("--seed", type=int, nargs="+", default=[0])
    p.add_argument("--mu", type=int, nargs="+", help="revision budgets (default: all)")
    if methods:
        p.add_argument("--method", nargs="+", choices=METHODS, default=None)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--horizon-cut", type=int, default=2)
    p.add_argument("--exact", action="store_true", help="disable heuristic cuts and relaxed-bound gating")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--gap", type=float, default=1e-6, help="relative MIP gap for direct solves")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--override", action="append", default=[], metavar="KEY=JSON",
                   help="GEP parameter override, e.g. penalty_per_mwh=5000")
    p.add_argument("--out", help="write CSV here instead of stdout")


def _config(args, default_methods) -> ExperimentConfig:
    overrides = {}
    for item in args.override:
        key, sep, val = item.partition("=")
        if not sep:
            raise ParameterError(f"override {item!r} is not KEY=VALUE")
        try:
            overrides[key] = json.loads(val)
        except json.JSONDecodeError:
            raise ParameterError(f"override value for {key!r} is not JSON") from None
    problem = "file" if args.instance else args.problem
    return ExperimentConfig(
        problem=problem, T=args.T, B=args.B, I=args.I, mu=args.mu, seeds=args.seed,
        methods=getattr(args, "method", None) or default_methods, epsilon=args.epsilon,
        horizon_cut=args.horizon_cut, heuristic=not args.exact, rub_gate=not args.exact,
        time_limit=args.time_limit, gap=args.gap, instance_path=args.instance,
        overrides=overrides, workers=args.workers,
    )


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amsp", description="Adaptive multistage stochastic programming toolkit")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count-nacs", help="NAC counts per (ancestor stage, stage) cell")
    p.add_argument("-T", type=int, required=True)
    p.add_argument("-B", type=int, required=True)
    p.add_argument("-I", type=int, default=1)
    p.add_argument("--mu", type=int, default=0)
    p.add_argument("--regime", default="reduced", choices=REGIMES + ("reduced",))
    p.add_argument("--out")

    p = sub.add_parser("gen", help="generate an instance file")
    _common(p, methods=False)
    p.add_argument("--json", required=True, help="instance output path")

    p = sub.add_parser("solve", help="solve instances with one method")
    _common(p)
    p.add_argument("--log", help="decomposition iteration log (CSV)")

    p = sub.add_parser("vams-sweep", help="VAMS for each revision budget")
    _common(p)

    p = sub.add_parser("enumerate-revisions", help="evaluate every revision schedule")
    _common(p, methods=False)

    p = sub.add_parser("compare", help="direct-full vs direct-reduced vs decomposition")
    _common(p)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARAM if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "count-nacs":
            rep = cmd_count_nacs(args.T, args.B, args.mu, args.I, args.regime)
            _emit(rep.to_csv(), args.out)
        elif args.command == "gen":
            cfg = _config(args, ["direct-reduced"])
            cfg.validate()
            mu = cfg.mu_values()[0] if args.mu else 0
            save_instance(cfg.instance(cfg.seeds[0], mu), args.json)
        elif args.command == "solve":
            _emit(cmd_solve(_config(args, ["direct-reduced"]), args.log).write(None), args.out)
        elif args.command == "vams-sweep":
            _emit(cmd_vams_sweep(_config(args, ["direct-reduced"])).write(None), args.out)
        elif args.command == "enumerate-revisions":
            _emit(cmd_enumerate_revisions(_config(args, ["direct-reduced"])).write(None), args.out)
        elif args.command == "compare":
            _emit(cmd_compare_methods(_config(args, list(METHODS))).write(None), args.out)
    except GuardExceeded as exc:
        print(f"amsp: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ParameterError, InstanceError, ValueError) as exc:
        print(f"amsp: {exc}", file=sys.stderr)
        return EXIT_PARAM
    except (SolverError, InconsistencyError) as exc:
        print(f"amsp: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
