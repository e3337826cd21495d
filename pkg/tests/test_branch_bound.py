import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opfbnb.branch_bound import (
    BnBConfig,
    DegenerateInterval,
    LevelExceedsVariables,
    Node,
    NodeStatus,
    NonPositiveLocal,
    Prune,
    RootInfeasible,
    bisect,
    default_order,
    evaluate,
    optimality_gap,
    parse_var,
    prune_decision,
    resolve_order,
    run,
    select_variable,
    var_name,
    _workers,
)
from opfbnb.case_model import Bus, Generator, Network
from opfbnb.qc_relaxation import Box
from oracles import newton_two_bus


def boxes_partition(parent, a, b, var):
    plo, phi = parent.interval(var)
    alo, ahi = a.interval(var)
    blo, bhi = b.interval(var)
    same = all(
        np.array_equal(getattr(parent, f), getattr(c, f))
        for c in (a, b) for f in ("v_lo", "v_hi", "th_lo", "th_hi")
        if not (f.startswith("v") and var[0] == "v" or f.startswith("th") and var[0] == "theta")
    )
    return same and alo == plo and bhi == phi and ahi == blo


# -- gap


def test_gap_examples():
    assert optimality_gap(5812.64, 5812.64 * (1 - 0.0098)) == pytest.approx(0.0098)
    assert optimality_gap(100.0, 100.0) == 0.0
    assert optimality_gap(100.0, 90.0) == pytest.approx(0.10)
    with pytest.raises(NonPositiveLocal):
        optimality_gap(0.0, -1.0)


# -- pruning


def test_prune_examples():
    ub, root, eps = 100.0, 90.0, 1e-4
    assert prune_decision(1.05 * ub, NodeStatus.FEASIBLE, root, ub, eps) == Prune.UPPER_BOUND
    assert prune_decision(None, NodeStatus.PRUNED_INFEASIBLE, root, ub, eps) == Prune.INFEASIBLE
    assert prune_decision(95.0, NodeStatus.FEASIBLE, root, ub, eps) == Prune.KEEP
    assert prune_decision(80.0, NodeStatus.FEASIBLE, root, ub, eps) == Prune.BELOW_ROOT
    assert prune_decision(ub - eps / 2, NodeStatus.FEASIBLE, root, ub, eps) == Prune.UPPER_BOUND
    assert prune_decision(root - eps / 2, NodeStatus.FEASIBLE, root, ub, eps) == Prune.KEEP


@given(st.floats(-1e6, 1e6), st.floats(0, 1e6), st.floats(0, 1e3), st.floats(0, 10))
def test_prune_is_total_and_consistent(lb, span, gap, eps):
    root = lb - gap
    ub = root + span
    d = prune_decision(lb, NodeStatus.FEASIBLE, root, ub, eps)
    assert d == (Prune.UPPER_BOUND if lb >= ub - eps else Prune.BELOW_ROOT if lb < root - eps else Prune.KEEP)


# -- variable selection


def test_default_order_case3(nets):
    order = default_order(nets["case3_lmbd"])
    assert select_variable(1, order) == ("v", 0)
    assert select_variable(4, order) == ("theta", 0)
    assert len(order) == 6
    with pytest.raises(LevelExceedsVariables):
        select_variable(7, order)
    with pytest.raises(LevelExceedsVariables):
        select_variable(0, order)


def test_order_strategies(nets):
    net = nets["case3_lmbd"]
    assert default_order(net, "buses-only") == [("v", 0), ("v", 1), ("v", 2)]
    assert default_order(net, "interleave")[:3] == [("v", 0), ("theta", 0), ("v", 1)]
    assert resolve_order(net, ["theta[2]", "v[1]"]) == [("theta", 2), ("v", 1)]
    with pytest.raises(ValueError):
        resolve_order(net, ["v[3]"])
    with pytest.raises(ValueError):
        default_order(net, "random")


@given(st.sampled_from(["v", "theta"]), st.integers(0, 10**6))
def test_var_name_round_trip(kind, i):
    assert parse_var(var_name((kind, i))) == (kind, i)


def test_parse_var_rejects_garbage():
    for text in ("x[1]", "v1", "v[a]"):
        with pytest.raises(ValueError):
            parse_var(text)


def test_levels_clamped_with_warning(nets):
    with pytest.warns(UserWarning):
        res = run(nets["case3_lmbd"], BnBConfig(levels=3, variable_order=["theta[0]"]))
    assert len(res.levels) == 1 and res.n_levels_requested == 3


# -- bisection


def _node(net, **intervals):
    box = Box.from_network(net)
    for key, (lo, hi) in intervals.items():
        kind, i = key.split("_")
        box = box.with_interval((kind, int(i)), lo, hi)
    return Node(0, 0, None, box)


def test_bisect_voltage(nets):
    node = _node(nets["case3_lmbd"], v_0=(0.9, 1.1))
    a, b = bisect(node, ("v", 0), 1)
    assert a.box.interval(("v", 0)) == pytest.approx((0.9, 1.0))
    assert b.box.interval(("v", 0)) == pytest.approx((1.0, 1.1))
    assert (a.id, b.id, a.parent_id, a.level) == (1, 2, 0, 1)
    assert boxes_partition(node.box, a.box, b.box, ("v", 0))


def test_bisect_angle(nets):
    node = _node(nets["case3_lmbd"], theta_1=(-0.2, 0.2))
    a, b = bisect(node, ("theta", 1))
    assert a.interval == (-0.2, 0.0) and b.interval == (0.0, 0.2)
    assert node.box.contains(a.box) and node.box.contains(b.box)


def test_bisect_degenerate(nets):
    node = _node(nets["case3_lmbd"], v_0=(1.0, 1.0 + 1e-12))
    with pytest.raises(DegenerateInterval):
        bisect(node, ("v", 0))


# -- evaluation


def test_root_evaluation(nets):
    node = evaluate(nets["case3_lmbd"], _node(nets["case3_lmbd"]), BnBConfig())
    assert node.status == NodeStatus.FEASIBLE
    assert optimality_gap(5812.64, node.lb) == pytest.approx(0.0098, abs=0.003)


def capacitive_two_bus(net):
    """The 2-bus fixture with a capacitive load that needs V2 above 1.04."""
    return replace(net, buses=(net.buses[0], replace(net.buses[1], q_d=-0.4)))


def test_infeasible_voltage_box(nets):
    net = capacitive_two_bus(nets["case2_fixture"])
    # the load bus voltage solving the balance, over the whole V1 range
    v2 = [newton_two_bus(net, v1)[0] for v1 in np.linspace(1.0, 1.1, 101)]
    assert min(v2) > 0.9001
    node = evaluate(net, _node(net, v_1=(0.90, 0.9001)), BnBConfig())
    assert node.status == NodeStatus.PRUNED_INFEASIBLE and node.lb is None


def test_root_infeasible_raises(nets):
    net = capacitive_two_bus(nets["case2_fixture"])
    net = replace(net, buses=(net.buses[0], replace(net.buses[1], v_min=0.9, v_max=0.9001)))
    with pytest.raises(RootInfeasible):
        run(net, BnBConfig(levels=1))


# -- runs


def test_zero_levels(nets):
    res = run(nets["case3_lmbd"], BnBConfig(levels=0))
    assert res.final_lower_bound == res.root_qc_lower_bound
    assert res.final_gap == res.qc_gap and res.total_children == 0 and res.best_node == 0


def test_saturated_single_bus():
    net = Network(100.0, (Bus(1, 0.9, 1.1, p_d=0.7, is_ref=True),), (),
                  (Generator(1, 0.0, 2.0, -1.0, 1.0, 0.0, 100.0, 0.0),))
    res = run(net, BnBConfig(levels=1))
    assert res.qc_gap == pytest.approx(0.0, abs=1e-8)
    assert [c.status for c in res.children()] == [NodeStatus.PRUNED_UPPER_BOUND] * 2
    assert res.final_gap == pytest.approx(0.0, abs=1e-12)
    assert res.best_node is None


def test_time_limit_truncates(nets):
    res = run(nets["case3_lmbd"], BnBConfig(levels=6, time_limit=1e-3))
    assert res.truncated and res.levels == [] and res.total_children == 0
    with pytest.raises(ValueError):
        run(nets["case3_lmbd"], BnBConfig(levels=1, time_limit=0.0))


@pytest.mark.parametrize("name", ["case3_lmbd", "case14_ieee"])
def test_run_invariants(bnb_runs, name):
    res = bnb_runs[name]
    ub, root, eps = res.ac_upper_bound, res.root_qc_lower_bound, res.epsilon
    assert eps == pytest.approx(max(1e-6 * ub, 1e-4))
    prev_lb, prev_gap = root, res.qc_gap
    for rec in res.levels:
        assert root <= rec.lower_bound <= ub + eps
        assert rec.lower_bound >= prev_lb - 1e-6 * (1 + abs(prev_lb))
        assert rec.gap <= prev_gap + 1e-6 * (1 + abs(prev_lb)) / ub
        prev_lb, prev_gap = rec.lower_bound, rec.gap
        kids = [c for c in res.children() if c.level == rec.level]
        assert len(kids) == rec.n_children
        assert rec.n_kept + rec.n_infeasible + rec.n_upper_bound + rec.n_below_root == rec.n_children
        for c in kids:
            p = res.node(c.parent_id)
            assert p.kept and p.level == c.level - 1
            assert p.box.contains(c.box) and c.var == rec.var
            if c.lb is not None:
                assert c.lb >= p.lb - 1e-6 * (1 + abs(p.lb))
        # siblings partition their parent on the level's variable
        by_parent = {}
        for c in kids:
            by_parent.setdefault(c.parent_id, []).append(c)
        for pid, pair in by_parent.items():
            a, b = sorted(pair, key=lambda n: n.id)
            assert boxes_partition(res.node(pid).box, a.box, b.box, rec.var)
    assert res.final_lower_bound == res.levels[-1].lower_bound
    survivors = [n for n in res.children() if n.level == len(res.levels) and n.kept]
    if survivors:
        assert res.best_node == min(survivors, key=lambda n: (n.lb, n.id)).id


def test_case3_improves(bnb_runs):
    res = bnb_runs["case3_lmbd"]
    assert res.final_gap < res.qc_gap
    assert 12 <= res.total_children <= 64
    assert any(not c.kept for c in res.children())


def test_ids_are_sequential(bnb_runs):
    for res in bnb_runs.values():
        assert [n.id for n in res.nodes] == list(range(len(res.nodes)))


def test_deterministic_and_parallel_identical(nets, monkeypatch):
    net = nets["case3_lmbd"]
    a = run(net, BnBConfig(levels=3))
    b = run(net, BnBConfig(levels=3))
    monkeypatch.setattr("os.cpu_count", lambda: 4)
    monkeypatch.setenv("OPFBNB_THREADS", "2")
    assert _workers(BnBConfig(parallel_children=True)) == 2
    c = run(net, BnBConfig(levels=3, parallel_children=True))
    for other in (b, c):
        assert [(n.id, n.parent_id, n.status, n.lb) for n in a.nodes] == \
               [(n.id, n.parent_id, n.status, n.lb) for n in other.nodes]
        assert a.final_lower_bound == other.final_lower_bound


def test_global_optimum_never_pruned(nets):
    net = nets["case2_fixture"]
    res = run(net, BnBConfig(levels=3))
    # global optimum from a 1e-3 scan of V1 with the load balance solved exactly
    best = None
    for v1 in np.linspace(1.0, 1.1, 101):
        sol = newton_two_bus(net, v1)
        v2, th2, p, q = sol
        a = net.arrays
        if not (0.9 <= v2 <= 1.1 and a.q_min[0] <= q <= a.q_max[0] and abs(th2) <= math.pi / 6):
            continue
        c = float(a.c2[0] * p * p + a.c1[0] * p + a.c0[0])
        if best is None or c < best[0]:
            best = (c, v1, v2, -th2)
    cost_g, v1, v2, d = best
    assert cost_g >= res.final_lower_bound - res.epsilon
    holders = [n for n in res.children() if n.level == len(res.levels)
               and n.status in (NodeStatus.FEASIBLE, NodeStatus.PRUNED_UPPER_BOUND)
               and n.box.v_lo[0] <= v1 <= n.box.v_hi[0] and n.box.v_lo[1] <= v2 <= n.box.v_hi[1]
               and n.box.th_lo[0] <= d <= n.box.th_hi[0]]
    pruned_ub = [n for n in res.children() if n.status == NodeStatus.PRUNED_UPPER_BOUND
                 and n.box.v_lo[0] <= v1 <= n.box.v_hi[0] and n.box.v_lo[1] <= v2 <= n.box.v_hi[1]
                 and n.box.th_lo[0] <= d <= n.box.th_hi[0]]
    assert holders or pruned_ub
