"""Outer-approximation solver for :class:`ConvexProgram`.

The linear rows go straight into an LP.  Quadratic rows, cone rows and an
epigraph for each quadratic objective term are replaced by supporting
hyperplanes, added at the LP optimum whenever they are violated and re-solved
with the dual simplex.  Every cut is valid for the convex row it came from, so
each LP optimum is a lower bound on the program's optimum.

Not implemented: warm starts across branch-and-bound nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .lp import PRIMAL_TOL, LinearProgram, SolveOutcome, Simplex, Status, presolve, solve_lp, verify_certificate
from .program import EQ, GE, LE, Affine, ConeRow, ConvexProgram, QuadRow

log = logging.getLogger(__name__)

__all__ = [
    "ConvexOutcome",
    "LinearProgram",
    "SolveOutcome",
    "Status",
    "presolve",
    "solve_convex",
    "solve_lp",
    "verify_certificate",
    "quad_cut",
    "cone_cut",
]


@dataclass
class ConvexOutcome(SolveOutcome):
    rounds: int = 0
    cuts: int = 0
    max_violation: float = np.nan
    trace: list[tuple[int, float, float]] = field(default_factory=list)


def quad_cut(row: QuadRow, x: np.ndarray) -> tuple[dict[int, float], float]:
    """Tangent of ``sum q x_i^2 + a.x <= b`` at ``x``: returns (coefficients, rhs)."""
    coef: dict[int, float] = {}
    for i, c in zip(row.lin.idx, row.lin.coef):
        coef[int(i)] = coef.get(int(i), 0.0) + c
    xs = x[row.qidx]
    for i, q, xi in zip(row.qidx, row.q, xs):
        coef[int(i)] = coef.get(int(i), 0.0) + 2 * q * xi
    rhs = row.rhs - row.lin.const + float(row.q @ (xs * xs))
    return coef, rhs


def cone_cut(row: ConeRow, x: np.ndarray) -> tuple[dict[int, float], float] | None:
    """Supporting hyperplane of ``||(a_k.x + b_k)|| <= c.x + d`` along the direction at ``x``."""
    u = np.array([t.value(x) for t in row.terms])
    nu = float(np.linalg.norm(u))
    if nu <= 1e-14:
        return None
    u = u / nu
    coef: dict[int, float] = {}
    rhs = row.bound.const
    for uk, t in zip(u, row.terms):
        rhs -= uk * t.const
        for i, c in zip(t.idx, t.coef):
            coef[int(i)] = coef.get(int(i), 0.0) + uk * c
    for i, c in zip(row.bound.idx, row.bound.coef):
        coef[int(i)] = coef.get(int(i), 0.0) - c
    return coef, rhs


def _normalised_violation(value: float, coef: dict[int, float]) -> float:
    norm = float(np.sqrt(sum(c * c for c in coef.values())))
    return value / max(norm, 1e-12)


class _Rows:
    """Accumulates sparse rows with bounds, scaled to unit max-abs coefficient."""

    def __init__(self, n: int):
        self.n = n
        self.data: list[float] = []
        self.cols: list[int] = []
        self.ptr = [0]
        self.lo: list[float] = []
        self.hi: list[float] = []

    def add(self, coef: dict[int, float], lo: float, hi: float) -> None:
        items = [(k, v) for k, v in sorted(coef.items()) if v != 0.0]
        if not items:
            return
        s = 1.0 / max(abs(v) for _, v in items)
        for k, v in items:
            self.cols.append(k)
            self.data.append(v * s)
        self.ptr.append(len(self.cols))
        self.lo.append(lo * s)
        self.hi.append(hi * s)

    def __len__(self) -> int:
        return len(self.lo)

    def take(self):
        A = sp.csr_matrix((self.data, self.cols, self.ptr), shape=(len(self.lo), self.n))
        lo, hi = np.array(self.lo), np.array(self.hi)
        self.__init__(self.n)
        return A, lo, hi


def _seed_points(lo: float, hi: float) -> list[float]:
    pts = [v for v in (lo, hi) if np.isfinite(v)]
    if np.isfinite(lo) and np.isfinite(hi):
        pts.insert(1, 0.5 * (lo + hi))
    elif not pts:
        pts = [0.0]
    return pts


def solve_convex(p: ConvexProgram, tol: float = 1e-6, max_rounds: int = 200, max_iter: int = 10**6,
                 verbose: bool = False) -> ConvexOutcome:
    """Minimise ``p`` by Kelley cutting planes around the simplex core.

    The returned objective is the last LP optimum, a valid lower bound on the
    program's optimum that is within ``tol`` (relative) of it on convergence.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    # cuts violated by less than the LP's own feasibility slack cannot move it
    tol = max(tol, 10 * PRIMAL_TOL)
    if not p.is_convex():
        raise ValueError("program has negative curvature")
    n0 = p.n
    quad_obj = np.flatnonzero(p.obj_quad > 0)
    n = n0 + len(quad_obj)

    lo = np.concatenate([p.lo, np.zeros(len(quad_obj))])
    hi = np.concatenate([p.hi, np.full(len(quad_obj), np.inf)])
    for k, i in enumerate(quad_obj):
        q, a, b = p.obj_quad[i], p.lo[i], p.hi[i]
        lo[n0 + k] = 0.0 if a <= 0 <= b else q * min(a * a, b * b)
        hi[n0 + k] = q * max(a * a, b * b)
    if np.any(lo > hi + 1e-9):
        return ConvexOutcome(Status.INFEASIBLE)
    lo = np.minimum(lo, hi)

    c = np.concatenate([p.obj_lin, np.ones(len(quad_obj))])

    # epigraph rows q x_i^2 - t_i <= 0
    epi = [
        QuadRow(np.array([i]), np.array([p.obj_quad[i]]), Affine(np.array([n0 + k]), np.array([-1.0])), 0.0, f"epi{i}")
        for k, i in enumerate(quad_obj)
    ]
    quads = list(p.quadratic)

    rows = _Rows(n)
    for r in p.linear:
        rhs = r.rhs - r.expr.const
        coef = {int(i): float(v) for i, v in zip(r.expr.idx, r.expr.coef)}
        if not coef:
            if (r.sense == LE and rhs < -1e-9) or (r.sense == GE and rhs > 1e-9) or (r.sense == EQ and abs(rhs) > 1e-9):
                return ConvexOutcome(Status.INFEASIBLE)
            continue
        rows.add(coef, -np.inf if r.sense == LE else rhs, np.inf if r.sense == GE else rhs)

    # seed cuts
    for row in quads + epi:
        pts = [_seed_points(lo[i], hi[i]) for i in row.qidx]
        for k in range(max(len(v) for v in pts)):
            x = np.zeros(n)
            for i, v in zip(row.qidx, pts):
                x[i] = v[min(k, len(v) - 1)]
            coef, rhs = quad_cut(row, x)
            rows.add(coef, -np.inf, rhs)
    for row in p.cones:
        if len(row.terms) == 2 and len(row.bound.idx) == 0:
            for k in range(8):
                ang = k * np.pi / 4
                coef: dict[int, float] = {}
                rhs = row.bound.const
                for w, t in zip((np.cos(ang), np.sin(ang)), row.terms):
                    rhs -= w * t.const
                    for i, cc in zip(t.idx, t.coef):
                        coef[int(i)] = coef.get(int(i), 0.0) + w * cc
                rows.add(coef, -np.inf, rhs)

    A, rlo, rhi = rows.take()
    simplex = Simplex(c, A, rlo, rhi, lo, hi, max_iter=max_iter)
    status = simplex.primal()
    out = ConvexOutcome(status)
    ncuts = A.shape[0]
    for rnd in range(1, max_rounds + 1):
        if status != Status.OPTIMAL:
            out.status = status
            out.rounds = rnd - 1
            out.iterations = simplex.iterations
            if status == Status.INFEASIBLE:
                out.certificate = simplex.farkas
            return out
        x = simplex.x()
        lp_obj = simplex.objective() + p.obj_const
        worst = 0.0
        for row in quads:
            val = row.value(x)
            if val <= 0:
                continue
            coef, rhs = quad_cut(row, x)
            v = _normalised_violation(val, coef)
            worst = max(worst, v)
            if v > tol * 0.1:
                rows.add(coef, -np.inf, rhs)
        for row in p.cones:
            val = row.value(x)
            if val <= 0:
                continue
            cut = cone_cut(row, x)
            if cut is None:
                continue
            v = _normalised_violation(val, cut[0])
            worst = max(worst, v)
            if v > tol * 0.1:
                rows.add(cut[0], -np.inf, cut[1])
        gap = 0.0
        obj_tol = tol * (1.0 + abs(lp_obj))
        for row in epi:
            val = row.value(x)
            if val <= 0:
                continue
            gap += val
            if val > 0.1 * obj_tol / max(1, len(epi)):
                coef, rhs = quad_cut(row, x)
                rows.add(coef, -np.inf, rhs)
        out.trace.append((rnd, lp_obj, worst))
        if verbose:
            log.info("round %d  lp %.10g  violation %.3e  objective gap %.3e", rnd, lp_obj, worst, gap)
        if worst <= tol and gap <= obj_tol:
            out.status = Status.OPTIMAL
            out.x = x[:n0]
            out.objective = lp_obj
            out.rounds = rnd
            out.cuts = ncuts
            out.max_violation = worst
            out.iterations = simplex.iterations
            return out
        if len(rows) == 0:
            # nothing left to separate numerically
            out.status = Status.OPTIMAL
            out.x = x[:n0]
            out.objective = lp_obj
            out.rounds = rnd
            out.cuts = ncuts
            out.max_violation = worst
            out.iterations = simplex.iterations
            return out
        A, rlo, rhi = rows.take()
        ncuts += A.shape[0]
        simplex.add_rows(A, rlo, rhi)
        status = simplex.dual()
    out.status = Status.ITER_LIMIT
    out.rounds = max_rounds
    out.cuts = ncuts
    out.iterations = simplex.iterations
    return out
