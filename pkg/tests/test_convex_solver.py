from dataclasses import replace

import numpy as np
import pytest

from cvx_oracle import solve_with_cvxpy
from opfbnb.convex_solver import Status, cone_cut, quad_cut, solve_convex
from opfbnb.program import GE, LE, Affine, ProgramBuilder
from opfbnb.qc_relaxation import Box, build_qc, lift


def test_parabola_epigraph():
    b = ProgramBuilder()
    x = b.add_var("x", 0.5, 2.0)
    h = b.add_var("h", -10, 10)
    b.add_quadratic({x: 1.0}, {h: -1.0}, 0.0)
    b.add_objective(lin={h: 1.0})
    out = solve_convex(b.build(), tol=1e-8)
    assert out.status == Status.OPTIMAL
    assert out.objective == pytest.approx(0.25, abs=1e-7)


def test_unit_circle():
    b = ProgramBuilder()
    P = b.add_var("P", -5, 5)
    Q = b.add_var("Q", -1, 1)
    b.add_cone([Affine.of({P: 1.0}), Affine.of({Q: 1.0})], Affine.of({}, 1.0))
    b.add_objective(lin={P: -1.0})
    out = solve_convex(b.build(), tol=1e-9)
    assert out.status == Status.OPTIMAL
    assert out.x[P] == pytest.approx(1.0, abs=1e-7)


def test_quadratic_objective():
    b = ProgramBuilder()
    x = b.add_var("x", -3, 3)
    b.add_objective(lin={x: -2.0}, quad={x: 1.0}, const=1.0)
    out = solve_convex(b.build(), tol=1e-9)
    assert out.objective == pytest.approx(0.0, abs=1e-8)
    assert out.x[x] == pytest.approx(1.0, abs=1e-4)


def test_infeasible_linear_rows():
    b = ProgramBuilder()
    x = b.add_var("x", 0, 1)
    b.add_linear({x: 1.0}, GE, 2.0)
    assert solve_convex(b.build()).status == Status.INFEASIBLE


def test_infeasible_through_cuts():
    b = ProgramBuilder()
    x = b.add_var("x", -2, 2)
    y = b.add_var("y", -2, 2)
    b.add_cone([Affine.of({x: 1.0}), Affine.of({y: 1.0})], Affine.of({}, 1.0))
    b.add_linear({x: 1.0, y: 1.0}, GE, 1.5)  # the line misses the unit disc
    assert solve_convex(b.build(), tol=1e-9).status == Status.INFEASIBLE


def test_rejects_nonconvex_and_bad_tol():
    b = ProgramBuilder()
    x = b.add_var("x", 0, 1)
    b.add_objective(lin={x: 1.0})
    with pytest.raises(ValueError):
        solve_convex(b.build(), tol=0.0)
    with pytest.raises(ValueError):
        solve_convex(replace(b.build(), obj_quad=np.array([-1.0])))


def test_trace_is_recorded():
    b = ProgramBuilder()
    x = b.add_var("x", 0.5, 2.0)
    h = b.add_var("h", -10, 10)
    b.add_quadratic({x: 1.0}, {h: -1.0}, 0.0)
    b.add_objective(lin={h: 1.0})
    out = solve_convex(b.build(), tol=1e-8, verbose=True)
    assert out.trace and out.trace[-1][2] <= 1e-8
    assert [r for r, _, _ in out.trace] == list(range(1, len(out.trace) + 1))


# -- against an independent conic solver


@pytest.mark.parametrize("name", ["case2_fixture", "case3_lmbd", "case14_ieee", "case3_lmbd__sad"])
def test_matches_cvxpy(nets, name):
    p = build_qc(nets[name]).program
    out = solve_convex(p, tol=1e-8)
    status, ref, _ = solve_with_cvxpy(p)
    assert status == "optimal"
    assert out.objective == pytest.approx(ref, rel=1e-6)
    assert out.objective <= ref + 1e-6 * (1 + abs(ref))


def test_matches_cvxpy_on_sub_boxes(nets, rng):
    net = nets["case3_lmbd"]
    root = Box.from_network(net)
    for _ in range(4):
        box = root
        for _ in range(3):
            k = int(rng.integers(0, 6))
            var = ("v", k) if k < 3 else ("theta", k - 3)
            lo, hi = box.interval(var)
            mid = 0.5 * (lo + hi)
            box = box.with_interval(var, *((lo, mid) if rng.random() < 0.5 else (mid, hi)))
        p = build_qc(net, box).program
        out = solve_convex(p, tol=1e-8)
        status, ref, _ = solve_with_cvxpy(p)
        if status == "infeasible":
            assert out.status == Status.INFEASIBLE
        else:
            assert out.objective == pytest.approx(ref, rel=1e-6)


def test_lower_bound_on_lifted_points(nets, ac_solutions):
    for name, (pt, _) in ac_solutions.items():
        qc = build_qc(nets[name])
        out = solve_convex(qc.program, tol=1e-8)
        val = qc.program.objective(lift(qc, nets[name], pt))
        assert out.objective <= val + 1e-8 * (1 + abs(out.objective))


def test_deterministic(nets):
    p = build_qc(nets["case14_ieee"]).program
    a, b = solve_convex(p, tol=1e-8), solve_convex(p, tol=1e-8)
    assert a.objective == b.objective and a.iterations == b.iterations and a.rounds == b.rounds
    assert np.array_equal(a.x, b.x)


# -- cut soundness


def test_quad_cuts_are_valid(rng):
    b = ProgramBuilder()
    xs = [b.add_var(f"x{i}", -3, 3) for i in range(3)]
    b.add_quadratic({xs[0]: 1.0, xs[1]: 2.5}, {xs[2]: -1.0}, 0.5)
    row = b.build().quadratic[0]
    for _ in range(200):
        coef, rhs = quad_cut(row, rng.uniform(-3, 3, 3))
        pts = rng.uniform(-3, 3, (500, 3))
        inside = pts[[row.value(p) <= 0 for p in pts]]
        lhs = sum(c * inside[:, i] for i, c in coef.items())
        assert np.all(lhs <= rhs + 1e-12 * (1 + abs(rhs)))


def test_cone_cuts_are_valid(rng):
    b = ProgramBuilder()
    x, y, w1, w2 = (b.add_var(n, -3, 3) for n in ("x", "y", "w1", "w2"))
    b.add_cone([Affine.of({x: 2.0}), Affine.of({y: 2.0}), Affine.of({w1: 1.0, w2: -1.0})],
               Affine.of({w1: 1.0, w2: 1.0}))
    row = b.build().cones[0]
    for _ in range(200):
        cut = cone_cut(row, rng.uniform(-3, 3, 4))
        if cut is None:
            continue
        coef, rhs = cut
        pts = rng.uniform(-3, 3, (500, 4))
        inside = pts[[row.value(p) <= 0 for p in pts]]
        lhs = sum(c * inside[:, i] for i, c in coef.items())
        assert np.all(lhs <= rhs + 1e-12 * (1 + abs(rhs)))
