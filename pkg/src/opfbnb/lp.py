"""Bounded-variable revised simplex for linear programs.

The LP ``min c.x  s.t.  rlo <= A x <= rhi,  lo <= x <= hi`` is held in the
equality form ``[A, -I] z = 0`` over ``z = [x; r]`` where the row activities
``r`` carry the row bounds.  Bases are factorised with SuperLU and updated in
product form between refactorisations.

Phase 1 minimises the sum of infeasibilities with a long-step ratio test.  Both
phases price with Devex reference weights and drop to Bland's rule after a run
of degenerate pivots.
A dual simplex re-optimises after rows are appended (cutting planes), since
the old basis extended by the new row activities stays dual feasible.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .program import EQ, GE, LE

log = logging.getLogger(__name__)

PRIMAL_TOL = 1e-9
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
REFACTOR_EVERY = 32
DEGENERATE_RUN = 50


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    c0: float = 0.0

    @classmethod
    def make(cls, c, A, sense, b, lo=None, hi=None, c0: float = 0.0) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        n = len(c)
        A = sp.csr_matrix(np.atleast_2d(A) if not sp.issparse(A) else A, dtype=float)
        if A.shape[1] != n and A.shape[0] * A.shape[1] == 0:
            A = sp.csr_matrix((A.shape[0], n))
        sense = np.asarray(sense, dtype=int).reshape(-1)
        b = np.asarray(b, dtype=float).reshape(-1)
        lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=float)
        hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float)
        lp = cls(c, A, sense, b, lo, hi, float(c0))
        lp.check()
        return lp

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def check(self) -> None:
        m, n = self.A.shape
        if not (len(self.c) == len(self.lo) == len(self.hi) == n):
            raise ValueError("column dimensions disagree")
        if not (len(self.sense) == len(self.b) == m):
            raise ValueError("row dimensions disagree")
        if not np.all(np.isin(self.sense, (LE, EQ, GE))):
            raise ValueError("row sense must be LE, EQ or GE")

    def row_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        rlo = np.where(self.sense == LE, -np.inf, self.b)
        rhi = np.where(self.sense == GE, np.inf, self.b)
        return rlo, rhi

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.c0


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray | None = None
    objective: float = np.nan
    certificate: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == Status.OPTIMAL


def farkas_holds(A, rlo, rhi, lo, hi, y, rel_tol: float = 1e-9) -> bool:
    """Check that multipliers ``y`` prove ``rlo <= A x <= rhi, lo <= x <= hi`` empty.

    Every feasible ``x`` satisfies ``(y A) x = y (A x)``; the certificate holds
    when the range of the left side over the variable box and the range of the
    right side over the row box do not meet.
    """
    y = np.array(y, dtype=float)
    A = sp.csr_matrix(A)
    scale = max(1.0, float(np.max(np.abs(y), initial=0.0)))
    # round-off entries would otherwise multiply infinite bounds
    y[np.abs(y) <= 1e-10 * scale] = 0.0
    g = A.T @ y
    g[np.abs(g) <= 1e-9 * scale] = 0.0

    def interval(coef, lo, hi):
        pos, neg = coef > 0, coef < 0
        lo_v = np.sum(coef[pos] * lo[pos]) + np.sum(coef[neg] * hi[neg])
        hi_v = np.sum(coef[pos] * hi[pos]) + np.sum(coef[neg] * lo[neg])
        return lo_v, hi_v

    a_lo, a_hi = interval(g, np.asarray(lo, float), np.asarray(hi, float))
    b_lo, b_hi = interval(y, np.asarray(rlo, float), np.asarray(rhi, float))
    finite = [abs(v) for v in (a_lo, a_hi, b_lo, b_hi) if np.isfinite(v)]
    margin = rel_tol * (1.0 + max(finite, default=0.0))
    return bool(a_hi < b_lo - margin or b_hi < a_lo - margin)


def verify_certificate(lp: LinearProgram, y) -> bool:
    rlo, rhi = lp.row_bounds()
    return farkas_holds(lp.A, rlo, rhi, lp.lo, lp.hi, y)


# ---------------------------------------------------------------------------
# presolve


@dataclass
class Presolved:
    lp: LinearProgram | None
    n_orig: int
    m_orig: int
    cols: np.ndarray  # kept column indices
    fixed: np.ndarray  # fixed column indices
    fixed_val: np.ndarray
    rows: np.ndarray  # kept row indices
    row_scale: np.ndarray  # multiplier applied to each kept row
    infeasible: bool = False
    certificate: np.ndarray | None = None

    def postsolve_x(self, x_red: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n_orig)
        x[self.cols] = x_red
        x[self.fixed] = self.fixed_val
        return x

    def postsolve_y(self, y_red: np.ndarray) -> np.ndarray:
        y = np.zeros(self.m_orig)
        np.add.at(y, self.rows, y_red * self.row_scale)
        return y


def presolve(lp: LinearProgram, tol: float = PRIMAL_TOL) -> Presolved:
    """Drop empty rows, substitute fixed columns and scale rows to unit max-abs."""
    m, n = lp.shape
    rlo, rhi = lp.row_bounds()
    empty = Presolved(None, n, m, np.arange(0), np.arange(0), np.zeros(0), np.arange(0), np.zeros(0), True)

    if np.any(lp.lo > lp.hi + tol):
        return empty
    fixed_mask = lp.lo >= lp.hi
    fixed = np.flatnonzero(fixed_mask)
    cols = np.flatnonzero(~fixed_mask)
    fixed_val = lp.lo[fixed]
    A = lp.A.tocsc()
    shift = A[:, fixed] @ fixed_val if len(fixed) else np.zeros(m)
    rlo, rhi = rlo - shift, rhi - shift
    Ar = A[:, cols].tocsr()
    c0 = lp.c0 + float(lp.c[fixed] @ fixed_val)

    Ar.eliminate_zeros()
    nnz_row = np.diff(Ar.indptr)
    empty_rows = np.flatnonzero(nnz_row == 0)
    for i in empty_rows:
        if rlo[i] > tol or rhi[i] < -tol:
            y = np.zeros(m)
            y[i] = 1.0
            empty.certificate = y
            return empty
    rows = np.flatnonzero(nnz_row > 0)
    Ar = Ar[rows]
    rlo, rhi = rlo[rows], rhi[rows]
    amax = np.asarray(abs(Ar).max(axis=1).todense()).ravel() if Ar.shape[0] else np.zeros(0)
    scale = 1.0 / amax
    Ar = sp.diags(scale) @ Ar
    rlo, rhi = rlo * scale, rhi * scale
    sense = np.where(np.isneginf(rlo), LE, np.where(np.isposinf(rhi), GE, EQ))
    ranged = np.isfinite(rlo) & np.isfinite(rhi) & (rlo < rhi)
    # Ranged rows are split so the reduced problem stays in sense/rhs form.
    if np.any(ranged):
        extra = np.flatnonzero(ranged)
        Ar = sp.vstack([Ar, Ar[extra]]).tocsr()
        sense = np.concatenate([np.where(ranged, GE, sense), np.full(len(extra), LE)])
        b = np.concatenate([np.where(sense[: len(rlo)] == LE, rhi, rlo), rhi[extra]])
        rows = np.concatenate([rows, rows[extra]])
        scale = np.concatenate([scale, scale[extra]])
    else:
        b = np.where(sense == LE, rhi, rlo)
    red = LinearProgram(lp.c[cols].copy(), sp.csr_matrix(Ar), sense, b, lp.lo[cols].copy(), lp.hi[cols].copy(), c0)
    return Presolved(red, n, m, cols, fixed, fixed_val, rows, scale)


# ---------------------------------------------------------------------------
# simplex core

_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3


class Simplex:
    """Revised simplex state over ``[A, -I] z = 0`` that can grow by rows."""

    def __init__(self, c, A, rlo, rhi, lo, hi, max_iter: int = 10**6, crash: bool = True):
        A = sp.csc_matrix(A, dtype=float)
        self.m, self.n = A.shape
        self.max_iter = max_iter
        self.iterations = 0
        self.A = A
        cmax = float(np.max(np.abs(c), initial=0.0))
        self.cscale = 1.0 / cmax if cmax > 0 else 1.0
        self.c = np.concatenate([np.asarray(c, float) * self.cscale, np.zeros(self.m)])
        self.l = np.concatenate([np.asarray(lo, float), np.asarray(rlo, float)])
        self.u = np.concatenate([np.asarray(hi, float), np.asarray(rhi, float)])
        self.basis = self.n + np.arange(self.m)
        self.state = np.full(self.n + self.m, _BASIC, dtype=np.int8)
        self.z = np.zeros(self.n + self.m)
        for j in range(self.n):
            self._set_nonbasic(j)
        if crash:
            self._crash()
        self._build_matrix()
        self._refactor()
        self._recompute_basics()

    def _crash(self) -> None:
        """Lower-triangular crash basis.

        Free columns, then columns by decreasing range, replace the activity of
        an equality row (any row for free columns) in which they have a large
        entry, provided they are zero in every row already claimed.  The result
        is triangular, hence nonsingular, and satisfies those equalities.
        """
        n, m = self.n, self.m
        A = self.A
        lo, hi = self.l[:n], self.u[:n]
        eq_row = self.l[n:] == self.u[n:]
        width = hi - lo
        free = np.isneginf(lo) & np.isposinf(hi)
        key = np.where(free, 0, np.where(np.isfinite(width), 2, 1))
        order = np.lexsort((np.arange(n), -np.where(np.isfinite(width), width, 0.0), key))
        claimed = np.zeros(m, dtype=bool)
        for j in order:
            if width[j] <= 0:
                continue
            s, e = A.indptr[j], A.indptr[j + 1]
            rows, vals = A.indices[s:e], np.abs(A.data[s:e])
            nz = vals > 0
            rows, vals = rows[nz], vals[nz]
            if len(rows) == 0 or np.any(claimed[rows]):
                continue
            ok = vals >= 0.1 * vals.max()
            pick = ok & eq_row[rows]
            if not np.any(pick):
                if not free[j]:
                    continue
                pick = ok
            cand = np.flatnonzero(pick)
            i = int(rows[cand[np.argmax(vals[cand])]])
            claimed[i] = True
            self.basis[i] = j
            self.state[j] = _BASIC
            self._set_nonbasic(n + i)

    # -- bookkeeping
    def _set_nonbasic(self, j: int, prefer: int | None = None) -> None:
        lo, hi = self.l[j], self.u[j]
        if prefer == _UPPER and np.isfinite(hi):
            self.state[j], self.z[j] = _UPPER, hi
        elif prefer == _LOWER and np.isfinite(lo):
            self.state[j], self.z[j] = _LOWER, lo
        elif np.isfinite(lo):
            self.state[j], self.z[j] = _LOWER, lo
        elif np.isfinite(hi):
            self.state[j], self.z[j] = _UPPER, hi
        else:
            self.state[j], self.z[j] = _FREE, 0.0

    def _build_matrix(self) -> None:
        self.M = sp.hstack([self.A, -sp.identity(self.m, format="csc")], format="csc")
        self.MT = self.M.T.tocsr()

    def _column(self, j: int) -> np.ndarray:
        a = np.zeros(self.m)
        s, e = self.M.indptr[j], self.M.indptr[j + 1]
        a[self.M.indices[s:e]] = self.M.data[s:e]
        return a

    def _refactor(self) -> None:
        B = self.M[:, self.basis].tocsc()
        try:
            self.lu = splu(B, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError:
            self._repair_basis(B)
            self.lu = splu(self.M[:, self.basis].tocsc(), permc_spec="COLAMD")
        self.etas: list[tuple[int, np.ndarray]] = []

    def _repair_basis(self, B) -> None:
        """Swap dependent basis columns for row activities of uncovered rows."""
        Bd = B.toarray()
        _, R, piv = sla.qr(Bd, pivoting=True, mode="economic")
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * max(1.0, diag[0] if len(diag) else 1.0)))
        dependent = piv[rank:]
        # rows spanned weakest by the independent columns get their activity back
        _, _, rpiv = sla.qr(Bd[:, piv[:rank]].T, pivoting=True, mode="economic")
        free_rows = [i for i in rpiv[rank:]] if rank < self.m else []
        for pos, row in zip(sorted(dependent), free_rows):
            old = self.basis[pos]
            self._set_nonbasic(old)
            self.basis[pos] = self.n + row
            self.state[self.n + row] = _BASIC
        log.debug("basis repaired: %d columns replaced", len(dependent))

    def ftran(self, a: np.ndarray) -> np.ndarray:
        v = self.lu.solve(a)
        for p, w in self.etas:
            vp = v[p] / w[p]
            v -= w * vp
            v[p] = vp
        return v

    def btran(self, cb: np.ndarray) -> np.ndarray:
        v = cb.astype(float, copy=True)
        for p, w in reversed(self.etas):
            v[p] = (v[p] - (w @ v - w[p] * v[p])) / w[p]
        return self.lu.solve(v, trans="T")

    def _recompute_basics(self) -> None:
        zn = self.z.copy()
        zn[self.basis] = 0.0
        self.z[self.basis] = self.ftran(-(self.M @ zn))

    def _pivot(self, r: int, q: int, w: np.ndarray, leave_state: int) -> None:
        out = self.basis[r]
        self.basis[r] = q
        self.state[q] = _BASIC
        self.state[out] = leave_state
        self.z[out] = self.l[out] if leave_state == _LOWER else (self.u[out] if leave_state == _UPPER else 0.0)
        self.etas.append((r, w))
        if len(self.etas) >= REFACTOR_EVERY:
            self._refactor()
            self._recompute_basics()

    def add_rows(self, A_new, rlo, rhi) -> None:
        """Append rows; their activities enter the basis so dual feasibility is kept."""
        A_new = sp.csc_matrix(A_new, dtype=float)
        k = A_new.shape[0]
        if k == 0:
            return
        x = self.z[: self.n]
        act = A_new @ x
        self.A = sp.vstack([self.A, A_new], format="csc")
        self.m += k
        self.c = np.concatenate([self.c, np.zeros(k)])
        self.l = np.concatenate([self.l, np.asarray(rlo, float)])
        self.u = np.concatenate([self.u, np.asarray(rhi, float)])
        self.z = np.concatenate([self.z, act])
        self.state = np.concatenate([self.state, np.full(k, _BASIC, dtype=np.int8)])
        self.basis = np.concatenate([self.basis, self.n + self.m - k + np.arange(k)])
        self._build_matrix()
        self._refactor()
        self._recompute_basics()

    # -- shared pieces
    def _reduced_costs(self, cost_b: np.ndarray, cost: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        y = self.btran(cost_b)
        d = -(self.MT @ y)
        if cost is not None:
            d += cost
        d[self.basis] = 0.0
        return y, d

    def _infeasibility(self):
        zb = self.z[self.basis]
        lb, ub = self.l[self.basis], self.u[self.basis]
        tol = PRIMAL_TOL * (1.0 + np.abs(zb))
        below = zb < lb - tol
        above = zb > ub + tol
        return below, above

    def x(self) -> np.ndarray:
        return self.z[: self.n].copy()

    def objective(self) -> float:
        return float(self.c[: self.n] @ self.z[: self.n]) / self.cscale

    # -- primal simplex
    def primal(self) -> Status:
        degenerate = 0
        since_refresh = 0
        gamma = np.ones(self.n + self.m)
        was_phase1 = None
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITER_LIMIT
            below, above = self._infeasibility()
            phase1 = bool(np.any(below) or np.any(above))
            if phase1 != was_phase1:
                gamma[:] = 1.0
                was_phase1 = phase1
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                y, d = self._reduced_costs(cb, None)
            else:
                y, d = self._reduced_costs(self.c[self.basis], self.c)

            st = self.state
            can_up = (st == _LOWER) & (self.u > self.l) & (d < -DUAL_TOL)
            can_dn = (st == _UPPER) & (d > DUAL_TOL)
            can_fr = (st == _FREE) & (np.abs(d) > DUAL_TOL)
            eligible = can_up | can_dn | can_fr
            if not np.any(eligible):
                if phase1:
                    self.farkas = y.copy()
                    return Status.INFEASIBLE
                return Status.OPTIMAL

            if degenerate >= DEGENERATE_RUN:
                q = int(np.flatnonzero(eligible)[0])
            else:
                score = np.where(eligible, d * d / gamma, -1.0)
                q = int(np.argmax(score))
            direction = 1.0 if d[q] < 0 else -1.0
            w = self.ftran(self._column(q))
            alpha = -direction * w  # rate of change of basics per unit step
            bland = degenerate >= DEGENERATE_RUN
            if phase1 and not bland:
                t, r, leave_state = self._ratio_phase1(alpha, below, above, abs(d[q]))
            else:
                t, r, leave_state = self._ratio_primal(alpha, below, above, bland=bland)

            span = self.u[q] - self.l[q]
            if np.isfinite(span) and span <= t:
                # bound flip
                self.z[self.basis] += alpha * span
                self.z[q] = self.u[q] if direction > 0 else self.l[q]
                self.state[q] = _UPPER if direction > 0 else _LOWER
                self.iterations += 1
                degenerate = 0 if span > 1e-12 else degenerate + 1
                continue
            if r < 0:
                if phase1:
                    raise RuntimeError("unbounded direction in phase 1")
                return Status.UNBOUNDED
            self.iterations += 1
            degenerate = degenerate + 1 if t <= 1e-12 else 0
            self.z[self.basis] += alpha * t
            self.z[q] += direction * t
            self._devex_update(gamma, r, q, w)
            self._pivot(r, q, w, leave_state)
            since_refresh += 1
            if since_refresh >= 16:
                self._recompute_basics()
                since_refresh = 0

    def _devex_update(self, gamma: np.ndarray, r: int, q: int, w: np.ndarray) -> None:
        """Devex reference weights after ``q`` replaces the basic in row ``r``."""
        e = np.zeros(self.m)
        e[r] = 1.0
        ratio = (self.MT @ self.btran(e)) / w[r]
        gq = gamma[q]
        np.maximum(gamma, ratio * ratio * gq, out=gamma)
        gamma[self.basis[r]] = max(gq / (w[r] * w[r]), 1.0)

    def _ratio_phase1(self, alpha, below, above, slope0: float):
        """Long-step ratio test on the piecewise-linear sum of infeasibilities.

        Basics may pass through bounds while the total infeasibility keeps
        falling; the step stops at the breakpoint where its slope turns
        nonnegative, and the basic owning that breakpoint leaves.
        """
        zb = self.z[self.basis]
        lb, ub = self.l[self.basis], self.u[self.basis]
        big = np.abs(alpha) > PIVOT_TOL
        inc, dec = big & (alpha > 0), big & (alpha < 0)
        feas = ~(below | above)
        a = np.abs(alpha)
        ts, who, hit = [], [], []

        def add(mask, t, state):
            idx = np.flatnonzero(mask)
            ts.append(t[idx])
            who.append(idx)
            hit.append(np.full(len(idx), state, dtype=np.int8))

        with np.errstate(divide="ignore", invalid="ignore"):
            to_l = (lb - zb) / alpha
            to_u = (ub - zb) / alpha
        add(inc & (feas | below) & np.isfinite(ub), to_u, _UPPER)
        add(inc & below, to_l, _LOWER)
        add(dec & (feas | above) & np.isfinite(lb), to_l, _LOWER)
        add(dec & above, to_u, _UPPER)
        t_all = np.concatenate(ts)
        if len(t_all) == 0:
            return np.inf, -1, 0
        w_all = np.concatenate(who)
        h_all = np.concatenate(hit)
        t_all = np.maximum(t_all, 0.0)
        order = np.lexsort((-a[w_all], t_all))
        slope = -slope0
        cum = slope + np.cumsum(a[w_all[order]])
        stop = int(np.argmax(cum >= -DUAL_TOL)) if np.any(cum >= -DUAL_TOL) else len(order) - 1
        k = order[stop]
        # among breakpoints at (numerically) the same step take the largest pivot
        t = float(t_all[k])
        same = order[(t_all[order] <= t + 1e-12) & (t_all[order] >= t - 1e-12)]
        k = same[np.argmax(a[w_all[same]])]
        return t, int(w_all[k]), int(h_all[k])

    def _ratio_primal(self, alpha, below, above, bland: bool):
        """Harris two-pass ratio test; returns (step, basis row, leaving state)."""
        zb = self.z[self.basis]
        lb, ub = self.l[self.basis], self.u[self.basis]
        big = np.abs(alpha) > PIVOT_TOL
        dec = big & (alpha < 0)
        inc = big & (alpha > 0)
        feas = ~(below | above)
        # limit and the bound reached, per basic
        lim = np.full(len(zb), np.inf)
        hit = np.zeros(len(zb), dtype=np.int8)
        tol = PRIMAL_TOL * (1.0 + np.abs(zb))

        m = dec & feas & np.isfinite(lb)
        lim[m] = (zb[m] - lb[m] + tol[m]) / -alpha[m]
        hit[m] = _LOWER
        m = inc & feas & np.isfinite(ub)
        lim[m] = (ub[m] - zb[m] + tol[m]) / alpha[m]
        hit[m] = _UPPER
        m = inc & below
        lim[m] = (lb[m] - zb[m] + tol[m]) / alpha[m]
        hit[m] = _LOWER
        m = dec & above
        lim[m] = (zb[m] - ub[m] + tol[m]) / -alpha[m]
        hit[m] = _UPPER

        if not np.any(np.isfinite(lim)):
            return np.inf, -1, 0
        tmax = float(np.min(lim))
        # exact step to each candidate bound
        exact = np.where(hit == _LOWER, (zb - lb) / np.where(alpha != 0, -alpha, 1.0),
                         (ub - zb) / np.where(alpha != 0, alpha, 1.0))
        exact = np.where(inc & below, (lb - zb) / np.where(alpha != 0, alpha, 1.0), exact)
        exact = np.where(dec & above, (zb - ub) / np.where(alpha != 0, -alpha, 1.0), exact)
        cand = np.flatnonzero(np.isfinite(lim) & (exact <= tmax))
        if bland:
            r = int(cand[np.argmin(self.basis[cand])])
        else:
            r = int(cand[np.argmax(np.abs(alpha[cand]))])
        t = max(float(exact[r]), 0.0)
        return t, r, int(hit[r])

    # -- dual simplex
    def dual_feasible(self) -> bool:
        _, d = self._reduced_costs(self.c[self.basis], self.c)
        st = self.state
        bad = ((st == _LOWER) & (self.u > self.l) & (d < -DUAL_TOL * 10)) | ((st == _UPPER) & (d > DUAL_TOL * 10)) | (
            (st == _FREE) & (np.abs(d) > DUAL_TOL * 10))
        return not bool(np.any(bad))

    def dual(self, max_pivots: int | None = None) -> Status:
        """Dual simplex from a dual-feasible basis; falls back to primal if needed."""
        count = 0
        while True:
            if self.iterations >= self.max_iter:
                return Status.ITER_LIMIT
            if max_pivots is not None and count >= max_pivots:
                return self.primal()
            zb = self.z[self.basis]
            lb, ub = self.l[self.basis], self.u[self.basis]
            tol = PRIMAL_TOL * (1.0 + np.abs(zb))
            viol = np.maximum(lb - zb - tol, zb - ub - tol)
            r = int(np.argmax(viol))
            if viol[r] <= 0:
                return self.primal()  # usually zero pivots; certifies optimality
            to_lower = zb[r] < lb[r]
            rho = self.btran(np.eye(1, self.m, r).ravel())
            alpha_row = self.MT @ rho
            _, d = self._reduced_costs(self.c[self.basis], self.c)
            st = self.state
            movable = (st != _BASIC) & ~((st == _LOWER) & (self.u <= self.l))
            big = np.abs(alpha_row) > PIVOT_TOL
            if to_lower:
                ok = movable & big & (((st == _LOWER) & (alpha_row < 0)) | ((st == _UPPER) & (alpha_row > 0)) | (st == _FREE))
            else:
                ok = movable & big & (((st == _LOWER) & (alpha_row > 0)) | ((st == _UPPER) & (alpha_row < 0)) | (st == _FREE))
            cand = np.flatnonzero(ok)
            if len(cand) == 0:
                self.farkas = rho.copy()
                return Status.INFEASIBLE
            ratio = np.abs(d[cand]) / np.abs(alpha_row[cand])
            # Harris: admit ratios within the dual tolerance, then take the largest pivot
            rmax = np.min((np.abs(d[cand]) + DUAL_TOL) / np.abs(alpha_row[cand]))
            near = cand[ratio <= rmax]
            q = int(near[np.argmax(np.abs(alpha_row[near]))])
            w = self.ftran(self._column(q))
            if abs(w[r]) < PIVOT_TOL:
                self._refactor()
                self._recompute_basics()
                count += 1
                continue
            bound = lb[r] if to_lower else ub[r]
            dq = (zb[r] - bound) / w[r]
            self.z[self.basis] -= w * dq
            self.z[q] += dq
            self.iterations += 1
            count += 1
            self._pivot(r, q, w, _LOWER if to_lower else _UPPER)


def solve_lp(lp: LinearProgram, max_iter: int = 10**6) -> SolveOutcome:
    """Solve ``lp`` to optimality or prove it infeasible or unbounded."""
    lp.check()
    pre = presolve(lp)
    if pre.infeasible:
        return SolveOutcome(Status.INFEASIBLE, certificate=pre.certificate)
    red = pre.lp
    if red.shape[1] == 0:
        x = pre.postsolve_x(np.zeros(0))
        rlo, rhi = red.row_bounds()
        return SolveOutcome(Status.OPTIMAL, x, lp.objective(x))
    rlo, rhi = red.row_bounds()
    s = Simplex(red.c, red.A, rlo, rhi, red.lo, red.hi, max_iter=max_iter)
    status = s.primal()
    if status == Status.INFEASIBLE:
        y = pre.postsolve_y(s.farkas)
        return SolveOutcome(status, certificate=y, iterations=s.iterations)
    if status != Status.OPTIMAL:
        return SolveOutcome(status, iterations=s.iterations)
    x = pre.postsolve_x(s.x())
    return SolveOutcome(status, x, lp.objective(x), iterations=s.iterations)
