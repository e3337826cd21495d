"""Level-synchronous branch and bound over QC relaxations.

At level ``l`` every surviving node is bisected on the same variable, both
children are relaxed, and each child is kept or pruned.  The incumbent is the
initial local AC solution and is never updated.
"""

from __future__ import annotations

import enum
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field

import numpy as np

from .ac_opf import OperatingPoint, local_solve
from .case_model import Network
from .convex_solver import Status, solve_convex
from .qc_relaxation import Box, QCOptions, build_qc

log = logging.getLogger(__name__)

Var = tuple[str, int]

MIN_SPLIT_WIDTH = 1e-9


class BnBError(Exception):
    pass


class RootInfeasible(BnBError):
    pass


class LevelExceedsVariables(BnBError):
    pass


class DegenerateInterval(BnBError):
    pass


class NonPositiveLocal(BnBError):
    pass


class NodeStatus(str, enum.Enum):
    UNSOLVED = "Unsolved"
    FEASIBLE = "Feasible"
    PRUNED_INFEASIBLE = "PrunedInfeasible"
    PRUNED_UPPER_BOUND = "PrunedByUpperBound"
    PRUNED_BELOW_ROOT = "PrunedBelowRoot"


class Prune(str, enum.Enum):
    KEEP = "Keep"
    INFEASIBLE = "Infeasible"
    UPPER_BOUND = "UpperBound"
    BELOW_ROOT = "BelowRoot"


_PRUNE_STATUS = {
    Prune.KEEP: NodeStatus.FEASIBLE,
    Prune.INFEASIBLE: NodeStatus.PRUNED_INFEASIBLE,
    Prune.UPPER_BOUND: NodeStatus.PRUNED_UPPER_BOUND,
    Prune.BELOW_ROOT: NodeStatus.PRUNED_BELOW_ROOT,
}


@dataclass
class Node:
    id: int
    level: int
    parent_id: int | None
    box: Box
    lb: float | None = None
    status: NodeStatus = NodeStatus.UNSOLVED
    var: Var | None = None  # variable whose interval created this node
    iter_limit: bool = False

    @property
    def kept(self) -> bool:
        return self.status == NodeStatus.FEASIBLE

    @property
    def interval(self) -> tuple[float, float] | None:
        return None if self.var is None else self.box.interval(self.var)


# ---------------------------------------------------------------------------
# variable orders

ORDER_STRATEGIES = ("buses-first", "buses-only", "interleave")


def var_name(var: Var) -> str:
    return f"{var[0]}[{var[1]}]"


def parse_var(text: str) -> Var:
    """Inverse of :func:`var_name`: ``v[3]`` or ``theta[0]``."""
    text = text.strip()
    kind, _, rest = text.partition("[")
    if kind not in ("v", "theta") or not rest.endswith("]"):
        raise ValueError(f"bad variable {text!r}; expected v[i] or theta[k]")
    return kind, int(rest[:-1])


def default_order(net: Network, strategy: str = "buses-first") -> list[Var]:
    buses = [("v", i) for i in range(net.n_bus)]
    branches = [("theta", k) for k in range(net.n_branch)]
    if strategy == "buses-first":
        return buses + branches
    if strategy == "buses-only":
        return buses
    if strategy == "interleave":
        out: list[Var] = []
        for k in range(max(len(buses), len(branches))):
            out += buses[k:k + 1] + branches[k:k + 1]
        return out
    raise ValueError(f"unknown order strategy {strategy!r}")


def resolve_order(net: Network, order: str | list) -> list[Var]:
    if isinstance(order, str):
        return default_order(net, order)
    out = [parse_var(v) if isinstance(v, str) else (str(v[0]), int(v[1])) for v in order]
    for kind, i in out:
        size = net.n_bus if kind == "v" else net.n_branch
        if not 0 <= i < size:
            raise ValueError(f"variable {var_name((kind, i))} out of range")
    return out


def select_variable(level: int, order: list[Var], net: Network | None = None) -> Var:
    """The variable split at ``level`` (1-based); shared by every parent."""
    if not 1 <= level <= len(order):
        raise LevelExceedsVariables(f"level {level} with {len(order)} variables in the order")
    return order[level - 1]


# ---------------------------------------------------------------------------
# configuration and result


@dataclass
class BnBConfig:
    levels: int = 0
    variable_order: str | list = "buses-first"
    prune_epsilon: float | None = None  # default max(1e-6 ub, 1e-4)
    jabr_cut: bool = True
    parallel_children: bool = False
    tol: float = 1e-8  # relaxation tolerance, well inside the 1e-6 monotonicity slack
    time_limit: float | None = None  # seconds; a level that would overrun it is abandoned whole

    def check(self, net: Network) -> list[Var]:
        if self.levels < 0:
            raise ValueError("levels must be >= 0")
        if self.prune_epsilon is not None and not self.prune_epsilon >= 0:
            raise ValueError("prune_epsilon must be >= 0")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be > 0")
        return resolve_order(net, self.variable_order)

    def epsilon(self, ub: float) -> float:
        if self.prune_epsilon is not None:
            return float(self.prune_epsilon)
        return max(1e-6 * abs(ub), 1e-4)


@dataclass
class LevelRecord:
    level: int
    var: Var
    lower_bound: float
    gap: float
    n_children: int
    n_kept: int
    n_infeasible: int
    n_upper_bound: int
    n_below_root: int
    n_unsplit: int = 0


@dataclass
class BnBResult:
    case: str
    ac_upper_bound: float
    root_qc_lower_bound: float
    final_lower_bound: float
    best_node: int | None
    levels: list[LevelRecord]
    nodes: list[Node]
    total_children: int
    wall_time: float
    epsilon: float
    order: list[Var]
    ac_point: OperatingPoint | None = None
    n_levels_requested: int = 0
    config: dict = field(default_factory=dict)
    truncated: bool = False  # stopped early by the time limit

    @property
    def qc_gap(self) -> float:
        return optimality_gap(self.ac_upper_bound, self.root_qc_lower_bound)

    @property
    def final_gap(self) -> float:
        return optimality_gap(self.ac_upper_bound, self.final_lower_bound)

    def children(self) -> list[Node]:
        return [n for n in self.nodes if n.parent_id is not None]

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]


# ---------------------------------------------------------------------------
# operations


def optimality_gap(local_solution: float, lower_bound: float) -> float:
    """``(local - lower) / local``."""
    if not local_solution > 0:
        raise NonPositiveLocal(f"local objective {local_solution} is not positive")
    return (local_solution - lower_bound) / local_solution


def prune_decision(lb: float | None, status: NodeStatus, root_lb: float, ub: float, eps: float) -> Prune:
    if status == NodeStatus.PRUNED_INFEASIBLE or lb is None:
        return Prune.INFEASIBLE
    if lb >= ub - eps:
        return Prune.UPPER_BOUND
    if lb < root_lb - eps:
        return Prune.BELOW_ROOT
    return Prune.KEEP


def bisect(node: Node, var: Var, next_id: int = 0) -> tuple[Node, Node]:
    """Split ``node`` at the midpoint of ``var``; children get ids ``next_id`` and ``next_id + 1``."""
    lo, hi = node.box.interval(var)
    if hi - lo < MIN_SPLIT_WIDTH:
        raise DegenerateInterval(f"{var_name(var)} has width {hi - lo:.3g}")
    mid = 0.5 * (lo + hi)
    low = Node(next_id, node.level + 1, node.id, node.box.with_interval(var, lo, mid), var=var)
    high = Node(next_id + 1, node.level + 1, node.id, node.box.with_interval(var, mid, hi), var=var)
    return low, high


def _relax(net: Network, box: Box, jabr_cut: bool, tol: float) -> tuple[Status, float | None]:
    qc = build_qc(net, box, QCOptions(jabr_cut=jabr_cut))
    out = solve_convex(qc.program, tol=tol)
    return out.status, (out.objective if out.status == Status.OPTIMAL else None)


def _relax_task(args):
    return _relax(*args)


def _evaluate_all(tasks, pool, deadline):
    """Relax every task in order; ``None`` if the deadline passes first."""
    if pool is not None:
        futures = [pool.submit(_relax_task, t) for t in tasks]
        out = []
        for f in futures:
            timeout = None if deadline is None else max(deadline - time.perf_counter(), 0.0)
            try:
                out.append(f.result(timeout=timeout))
            except FutureTimeout:
                for g in futures:
                    g.cancel()
                return None
        return out
    out = []
    for t in tasks:
        if deadline is not None and time.perf_counter() > deadline:
            return None
        out.append(_relax_task(t))
    return out


def evaluate(net: Network, node: Node, cfg: BnBConfig, parent_lb: float | None = None) -> Node:
    """Relax ``node`` and record its bound, or mark it infeasible."""
    status, obj = _relax(net, node.box, cfg.jabr_cut, cfg.tol)
    return _record(node, status, obj, parent_lb)


def _record(node: Node, status: Status, obj: float | None, parent_lb: float | None) -> Node:
    if status == Status.OPTIMAL:
        node.lb, node.status = float(obj), NodeStatus.FEASIBLE
    elif status == Status.INFEASIBLE:
        node.lb, node.status = None, NodeStatus.PRUNED_INFEASIBLE
    else:
        log.warning("node %d: relaxation stopped with %s; keeping parent bound", node.id, status.value)
        node.lb, node.status, node.iter_limit = parent_lb, NodeStatus.FEASIBLE, True
    return node


def _workers(cfg: BnBConfig) -> int:
    if not cfg.parallel_children:
        return 1
    cap = os.environ.get("OPFBNB_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring OPFBNB_THREADS=%r", cap)
    return n


def run(net: Network, cfg: BnBConfig | None = None, ac_start: OperatingPoint | None = None) -> BnBResult:
    cfg = BnBConfig() if cfg is None else cfg
    order = cfg.check(net)
    t0 = time.perf_counter()

    levels = cfg.levels
    if levels > len(order):
        msg = f"{levels} levels requested but the order has {len(order)} variables; clamping"
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
        levels = len(order)

    root = Node(0, 0, None, Box.from_network(net))
    status, obj = _relax(net, root.box, cfg.jabr_cut, cfg.tol)
    if status == Status.INFEASIBLE:
        raise RootInfeasible("root relaxation is infeasible")
    if status != Status.OPTIMAL:
        raise BnBError(f"root relaxation stopped with {status.value}")
    root.lb, root.status = float(obj), NodeStatus.FEASIBLE
    root_lb = root.lb

    pt, ub = local_solve(net, ac_start)
    eps = cfg.epsilon(ub)
    log.info("root: qc %.6f  ac %.6f  gap %.4f%%", root_lb, ub, 100 * optimality_gap(ub, root_lb))

    nodes = [root]
    survivors = [root]
    # a sub-box relaxation is never below its parent's, so each node inherits the
    # larger of its own and its parent's bound; this absorbs solver noise
    bound = {root.id: root_lb}
    records: list[LevelRecord] = []
    deadline = None if cfg.time_limit is None else t0 + cfg.time_limit
    truncated = False
    workers = _workers(cfg)
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for level in range(1, levels + 1):
            var = select_variable(level, order, net)
            children: list[Node] = []
            unsplit: list[Node] = []
            for parent in survivors:
                try:
                    pair = bisect(parent, var, len(nodes) + len(children))
                except DegenerateInterval:
                    unsplit.append(parent)
                    continue
                children.extend(pair)
            parent_lb = {p.id: bound[p.id] for p in survivors}
            tasks = [(net, c.box, cfg.jabr_cut, cfg.tol) for c in children]
            results = _evaluate_all(tasks, pool, deadline)
            if results is None:
                truncated = True
                log.warning("time limit reached during level %d; stopping after level %d", level, level - 1)
                break

            counts = dict.fromkeys(Prune, 0)
            contrib = [bound[p.id] for p in unsplit]
            kept: list[Node] = []
            for child, (st, val) in zip(children, results):  # merge in node-id order
                _record(child, st, val, parent_lb[child.parent_id])
                decision = prune_decision(child.lb, child.status, root_lb, ub, eps)
                counts[decision] += 1
                child.status = _PRUNE_STATUS[decision]
                if decision == Prune.KEEP:
                    kept.append(child)
                    bound[child.id] = max(child.lb, parent_lb[child.parent_id])
                    contrib.append(bound[child.id])
                elif decision == Prune.UPPER_BOUND:
                    contrib.append(ub)
                elif decision == Prune.BELOW_ROOT:
                    log.warning("node %d: bound %.9g below the root bound %.9g", child.id, child.lb, root_lb)
                    contrib.append(parent_lb[child.parent_id])
            nodes.extend(children)
            survivors = unsplit + kept
            survivors.sort(key=lambda n: n.id)
            lb_level = min([ub] + contrib)
            records.append(LevelRecord(
                level, var, lb_level, optimality_gap(ub, lb_level), len(children), counts[Prune.KEEP],
                counts[Prune.INFEASIBLE], counts[Prune.UPPER_BOUND], counts[Prune.BELOW_ROOT], len(unsplit),
            ))
            log.info("level %d  %s  children %d  kept %d  lb %.6f  gap %.4f%%", level, var_name(var),
                     len(children), counts[Prune.KEEP], lb_level, 100 * records[-1].gap)
    finally:
        if pool is not None:
            pool.shutdown()

    final_lb = records[-1].lower_bound if records else root_lb
    best = min(survivors, key=lambda n: (n.lb, n.id)).id if survivors else None
    return BnBResult(
        case=net.name,
        ac_upper_bound=float(ub),
        root_qc_lower_bound=root_lb,
        final_lower_bound=float(final_lb),
        best_node=best,
        levels=records,
        nodes=nodes,
        total_children=len(nodes) - 1,
        wall_time=time.perf_counter() - t0,
        epsilon=eps,
        order=order,
        ac_point=pt,
        n_levels_requested=cfg.levels,
        truncated=truncated,
        config={
            "levels": levels,
            "variable_order": cfg.variable_order if isinstance(cfg.variable_order, str)
            else [var_name(v) for v in order],
            "prune_epsilon": eps,
            "jabr_cut": cfg.jabr_cut,
            "tol": cfg.tol,
        },
    )
