"""Independent solve of a ConvexProgram with cvxpy, used as a test oracle."""

import cvxpy as cp
import numpy as np

from opfbnb.program import EQ, LE


def _aff(x, a):
    if len(a.idx) == 0:
        return a.const
    return a.coef @ x[a.idx] + a.const


def solve_with_cvxpy(p):
    x = cp.Variable(p.n)
    cons = []
    fin_lo = np.isfinite(p.lo)
    fin_hi = np.isfinite(p.hi)
    if fin_lo.any():
        cons.append(x[np.flatnonzero(fin_lo)] >= p.lo[fin_lo])
    if fin_hi.any():
        cons.append(x[np.flatnonzero(fin_hi)] <= p.hi[fin_hi])
    for r in p.linear:
        e = _aff(x, r.expr)
        cons.append(e == r.rhs if r.sense == EQ else (e <= r.rhs if r.sense == LE else e >= r.rhs))
    for r in p.quadratic:
        cons.append(r.q @ cp.square(x[r.qidx]) + _aff(x, r.lin) <= r.rhs)
    for r in p.cones:
        cons.append(cp.norm(cp.hstack([_aff(x, t) for t in r.terms])) <= _aff(x, r.bound))
    q = np.flatnonzero(p.obj_quad)
    obj = p.obj_lin @ x + p.obj_const
    if len(q):
        obj = obj + p.obj_quad[q] @ cp.square(x[q])
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob.status, prob.value, x.value
