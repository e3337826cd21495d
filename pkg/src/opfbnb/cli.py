"""Command line entry point: ``opfbnb solve | relax | check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import fixture_path
from .ac_opf import LocalSolveFailed, OperatingPoint, check_feasible, local_solve
from .branch_bound import ORDER_STRATEGIES, BnBConfig, RootInfeasible, optimality_gap, parse_var, run
from .case_model import CaseError, Network, load_case, validate
from .convex_solver import Status, solve_convex
from .qc_relaxation import QCOptions, build_qc
from .reporting import ReportError, build_report, emit

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

log = logging.getLogger("opfbnb")


class UsageError(Exception):
    pass


def _load(case: str) -> Network:
    path = Path(case)
    if not path.exists():
        try:
            path = fixture_path(case)
        except FileNotFoundError:
            raise UsageError(f"case file not found: {case}") from None
    net = load_case(path)
    problems = validate(net)
    if problems:
        raise UsageError("invalid case: " + "; ".join(f"{v.rule} ({v.entity})" for v in problems))
    return net


def _order(spec: str) -> str | list[str]:
    if spec in ORDER_STRATEGIES:
        return spec
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"--order must be one of {', '.join(ORDER_STRATEGIES)} or a file")
    names = [tok for line in path.read_text().splitlines() for tok in line.split("#")[0].split()]
    for n in names:
        parse_var(n)
    return names


def _cmd_solve(args) -> int:
    net = _load(args.case)
    cfg = BnBConfig(
        levels=args.levels,
        variable_order=_order(args.order),
        prune_epsilon=args.eps,
        jabr_cut=not args.no_jabr_cut,
        parallel_children=args.parallel,
        time_limit=args.time_limit,
    )
    result = run(net, cfg)
    report = build_report(result)
    files = emit(report, args.format, args.out, timing=args.timing)
    print(f"case {report.case}: ac {report.ac_obj:.6f}  qc gap {report.qc_gap_pct:.4f}%  "
          f"bb-qc gap {report.bbqc_gap_pct:.4f}%  levels {report.n_lev}  children {report.n_child}  "
          f"time {report.time_s:.2f}s")
    for p in files:
        log.info("wrote %s", p)
    return EXIT_OK


def _cmd_relax(args) -> int:
    net = _load(args.case)
    t0 = time.perf_counter()
    qc = build_qc(net, opts=QCOptions(jabr_cut=not args.no_jabr_cut))
    out = solve_convex(qc.program, tol=BnBConfig.tol)
    if out.status == Status.INFEASIBLE:
        print(json.dumps({"case": net.name, "status": out.status.value}, sort_keys=True))
        return EXIT_INFEASIBLE
    if out.status != Status.OPTIMAL:
        raise RuntimeError(f"relaxation stopped with {out.status.value}")
    doc = {"case": net.name, "status": out.status.value, "qc_lower_bound": out.objective}
    try:
        _, ac = local_solve(net)
        doc["ac_objective"] = ac
        doc["qc_gap_pct"] = 100.0 * optimality_gap(ac, out.objective)
    except LocalSolveFailed as e:
        log.warning("local AC solve failed: %s", e)
    if args.timing:
        doc["time_s"] = time.perf_counter() - t0
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_check(args) -> int:
    net = _load(args.case)
    src = Path(args.point)
    text = src.read_text() if src.exists() else args.point
    try:
        pt = OperatingPoint.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad operating point: {e}") from None
    report = check_feasible(net, pt, tol=args.tol)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opfbnb", description="QC relaxation and branch and bound for AC-OPF")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="branch and bound over QC relaxations")
    s.add_argument("--case", required=True, help="MATPOWER case file or shipped fixture name")
    s.add_argument("--levels", type=int, default=0)
    s.add_argument("--order", default="buses-first", help=f"{' | '.join(ORDER_STRATEGIES)} | FILE")
    s.add_argument("--no-jabr-cut", action="store_true")
    s.add_argument("--eps", type=float, default=None, help="pruning tolerance (default max(1e-6 ub, 1e-4))")
    s.add_argument("--parallel", action="store_true", help="evaluate children in worker processes")
    s.add_argument("--out", default=".", help="output directory")
    s.add_argument("--format", choices=("json", "csv", "both"), default="both")
    s.add_argument("--seed", type=int, default=0, help="accepted for reproducible scripts; the run is deterministic")
    s.add_argument("--timing", action="store_true", help="include wall time in the output files")
    s.add_argument("--time-limit", type=float, default=None, help="seconds; the level in progress at the limit is dropped whole")
    s.set_defaults(func=_cmd_solve)

    r = sub.add_parser("relax", help="root QC lower bound and local AC objective")
    r.add_argument("--case", required=True)
    r.add_argument("--no-jabr-cut", action="store_true")
    r.add_argument("--timing", action="store_true")
    r.set_defaults(func=_cmd_relax)

    c = sub.add_parser("check", help="AC feasibility report for an operating point")
    c.add_argument("--case", required=True)
    c.add_argument("--point", required=True, help="JSON file or inline JSON with v, theta, pg, qg")
    c.add_argument("--tol", type=float, default=1e-6)
    c.set_defaults(func=_cmd_check)

    for sp_ in (s, r, c):
        sp_.add_argument("--verbose", "-v", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except RootInfeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, CaseError, ReportError, LocalSolveFailed, OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
