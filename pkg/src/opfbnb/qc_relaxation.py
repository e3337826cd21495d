"""Quadratic-convex (QC) relaxation of polar AC-OPF over a bound box.

Lifted variables per bus: ``V``, ``w = V^2``; per branch ``l -> m``:
``td = theta_l - theta_m``, ``wlm = V_l V_m``, ``C ~ cos(td)``, ``S ~ sin(td)``,
``c = wlm C``, ``s = wlm S`` and the four end flows, which are linear in
``(w_l, w_m, c, s)``.  Every nonconvex identity is replaced by its convex
envelope over the box: squares, McCormick products, and the sine/cosine
envelopes below.  An optional rotated cone ``c^2 + s^2 <= w_l w_m`` tightens
the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .ac_opf import OperatingPoint, branch_flows
from .case_model import Network
from .program import EQ, GE, LE, Affine, ConvexProgram, ProgramBuilder

HALF_PI = math.pi / 2
MIN_WIDTH = 1e-9


class InvalidBounds(ValueError):
    pass


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True)
class EnvRow:
    """``a . xs + b * h  (sense)  rhs``."""

    a: tuple[float, ...]
    b: float
    sense: int
    rhs: float


@dataclass(frozen=True)
class Envelope:
    """Convex set linking inputs ``xs`` to a lifted value ``h``.

    ``quad`` rows read ``k * xs[0]**2 + b * h <= rhs`` with ``k >= 0``.
    """

    rows: tuple[EnvRow, ...]
    quad: tuple[tuple[float, float, float], ...] = ()

    def h_range(self, *xs: float) -> tuple[float, float]:
        lo, hi = -math.inf, math.inf
        x = np.asarray(xs, dtype=float)
        for r in self.rows:
            val = (r.rhs - float(np.dot(r.a, x))) / r.b
            le = (r.sense == LE) == (r.b > 0)
            if r.sense == EQ:
                lo, hi = max(lo, val), min(hi, val)
            elif le:
                hi = min(hi, val)
            else:
                lo = max(lo, val)
        for k, b, rhs in self.quad:
            val = (rhs - k * x[0] ** 2) / b
            if b > 0:
                hi = min(hi, val)
            else:
                lo = max(lo, val)
        return lo, hi

    def violation(self, *xs: float, h: float) -> float:
        lo, hi = self.h_range(*xs)
        return max(lo - h, h - hi, 0.0)

    def add_to(self, b: ProgramBuilder, xs: tuple[int, ...], h: int, name: str) -> None:
        for j, r in enumerate(self.rows):
            terms = {h: r.b}
            for i, a in zip(xs, r.a):
                terms[i] = terms.get(i, 0.0) + a
            b.add_linear(terms, r.sense, r.rhs, f"{name}.{j}")
        for j, (k, bh, rhs) in enumerate(self.quad):
            b.add_quadratic({xs[0]: k}, {h: bh}, rhs, f"{name}.q{j}")


def _check(lo: float, hi: float) -> None:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise InvalidBounds(f"non-finite interval [{lo}, {hi}]")
    if lo > hi:
        raise InvalidBounds(f"inverted interval [{lo}, {hi}]")


def _check_angle(lo: float, hi: float) -> None:
    _check(lo, hi)
    if not (-HALF_PI < lo and hi < HALF_PI):
        raise InvalidBounds(f"angle interval [{lo}, {hi}] leaves (-pi/2, pi/2)")


def square_envelope(lo: float, hi: float) -> Envelope:
    """``xh >= x^2`` and the secant ``xh <= (lo + hi) x - lo hi``."""
    _check(lo, hi)
    return Envelope(
        rows=(EnvRow((-(lo + hi),), 1.0, LE, -lo * hi),),
        quad=((1.0, -1.0, 0.0),),
    )


def mccormick(x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> Envelope:
    """Four McCormick rows for ``w = x y``; inputs ordered ``(x, y)``."""
    _check(x_lo, x_hi)
    _check(y_lo, y_hi)
    return Envelope(rows=(
        EnvRow((y_lo, x_lo), -1.0, LE, x_lo * y_lo),
        EnvRow((y_hi, x_hi), -1.0, LE, x_hi * y_hi),
        EnvRow((-y_hi, -x_lo), 1.0, LE, -x_lo * y_hi),
        EnvRow((-y_lo, -x_hi), 1.0, LE, -x_hi * y_lo),
    ))


def _secant_slope(f, df, lo: float, hi: float) -> float:
    return df(lo) if hi - lo < 1e-12 else (f(hi) - f(lo)) / (hi - lo)


def sin_envelope(lo: float, hi: float) -> Envelope:
    """Tangents at ``+-x_m/2`` plus the chord on whichever side the box fixes the sign."""
    _check_angle(lo, hi)
    xm = max(abs(lo), abs(hi))
    a = xm / 2
    ca, sa = math.cos(a), math.sin(a)
    rows = [
        EnvRow((-ca,), 1.0, LE, sa - a * ca),
        EnvRow((-ca,), 1.0, GE, a * ca - sa),
    ]
    m = _secant_slope(math.sin, math.cos, lo, hi)
    if lo >= 0:
        rows.append(EnvRow((-m,), 1.0, GE, math.sin(lo) - m * lo))
    elif hi <= 0:
        rows.append(EnvRow((-m,), 1.0, LE, math.sin(lo) - m * lo))
    return Envelope(rows=tuple(rows))


def cos_curvature(xm: float) -> float:
    """``(1 - cos xm) / xm^2`` evaluated without cancellation."""
    if xm == 0.0:
        return 0.5
    h = math.sin(xm / 2) / xm
    return 2 * h * h


def cos_envelope(lo: float, hi: float) -> Envelope:
    """``C <= 1 - k theta^2`` with ``k = (1 - cos x_m)/x_m^2`` and the lower chord."""
    _check_angle(lo, hi)
    xm = max(abs(lo), abs(hi))
    k = cos_curvature(xm)
    m = _secant_slope(math.cos, lambda t: -math.sin(t), lo, hi)
    return Envelope(
        rows=(EnvRow((-m,), 1.0, GE, math.cos(lo) - m * lo),),
        quad=((k, 1.0, 1.0),),
    )


def trig_bounds(lo: float, hi: float) -> tuple[float, float, float, float]:
    """``(s_lo, s_hi, c_lo, c_hi)`` of sine and cosine over ``[lo, hi]``."""
    _check_angle(lo, hi)
    cl, ch = math.cos(lo), math.cos(hi)
    c_hi = max(cl, ch) if np.sign(lo) == np.sign(hi) else 1.0
    return math.sin(lo), math.sin(hi), min(cl, ch), c_hi


def product_bounds(x_lo, x_hi, y_lo, y_hi) -> tuple[float, float]:
    corners = (x_lo * y_lo, x_lo * y_hi, x_hi * y_lo, x_hi * y_hi)
    return min(corners), max(corners)


def widen(lo: float, hi: float, width: float = MIN_WIDTH) -> tuple[float, float]:
    if hi - lo >= width:
        return lo, hi
    mid = 0.5 * (lo + hi)
    return mid - width / 2, mid + width / 2


# ---------------------------------------------------------------------------
# box


@dataclass(frozen=True)
class Box:
    v_lo: np.ndarray
    v_hi: np.ndarray
    th_lo: np.ndarray
    th_hi: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "Box":
        a = net.arrays
        lo, hi = net.angle_limits(clamp=True)
        return cls(a.v_min.copy(), a.v_max.copy(), lo, hi)

    def check(self, net: Network | None = None) -> None:
        if net is not None and (len(self.v_lo) != net.n_bus or len(self.th_lo) != net.n_branch):
            raise InvalidBounds("box dimensions do not match the network")
        if np.any(self.v_lo > self.v_hi) or np.any(self.th_lo > self.th_hi):
            raise InvalidBounds("inverted interval in box")
        if np.any(self.v_lo <= 0):
            raise InvalidBounds("voltage bounds must be positive")
        if np.any(self.th_lo <= -HALF_PI) or np.any(self.th_hi >= HALF_PI):
            raise InvalidBounds("angle bounds must lie inside (-pi/2, pi/2)")

    def interval(self, var: tuple[str, int]) -> tuple[float, float]:
        kind, i = var
        if kind == "v":
            return float(self.v_lo[i]), float(self.v_hi[i])
        if kind == "theta":
            return float(self.th_lo[i]), float(self.th_hi[i])
        raise KeyError(kind)

    def with_interval(self, var: tuple[str, int], lo: float, hi: float) -> "Box":
        kind, i = var
        if kind == "v":
            vl, vh = self.v_lo.copy(), self.v_hi.copy()
            vl[i], vh[i] = lo, hi
            return replace(self, v_lo=vl, v_hi=vh)
        if kind == "theta":
            tl, th = self.th_lo.copy(), self.th_hi.copy()
            tl[i], th[i] = lo, hi
            return replace(self, th_lo=tl, th_hi=th)
        raise KeyError(kind)

    def contains(self, other: "Box") -> bool:
        return bool(
            np.all(self.v_lo <= other.v_lo) and np.all(other.v_hi <= self.v_hi)
            and np.all(self.th_lo <= other.th_lo) and np.all(other.th_hi <= self.th_hi)
        )

    def contains_point(self, net: Network, pt: OperatingPoint, tol: float = 0.0) -> bool:
        a = net.arrays
        d = pt.theta[a.f] - pt.theta[a.t]
        return bool(
            np.all(self.v_lo - tol <= pt.v) and np.all(pt.v <= self.v_hi + tol)
            and np.all(self.th_lo - tol <= d) and np.all(d <= self.th_hi + tol)
        )

    def to_dict(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)] for k in ("v_lo", "v_hi", "th_lo", "th_hi")}


# ---------------------------------------------------------------------------
# program


@dataclass(frozen=True)
class QCOptions:
    jabr_cut: bool = True


@dataclass(frozen=True)
class QCLayout:
    """Variable indices of a built program, per bus / branch / generator."""

    V: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    td: np.ndarray
    wlm: np.ndarray
    C: np.ndarray
    S: np.ndarray
    c: np.ndarray
    s: np.ndarray
    flows: np.ndarray  # (4, n_branch): P_lm, Q_lm, P_ml, Q_ml
    pg: np.ndarray
    qg: np.ndarray


@dataclass(frozen=True)
class QCProgram:
    program: ConvexProgram
    layout: QCLayout
    box: Box
    options: QCOptions = field(default_factory=QCOptions)


def _flow_terms(net: Network) -> np.ndarray:
    """Coefficients of each end flow on ``(w_self, c, s)``, shape (4, n_branch, 3)."""
    A = net.arrays
    yff, yft, ytf, ytt = A.y_ff, A.y_ft, A.y_tf, A.y_tt
    G_ff, B_ff, G_ft, B_ft = yff.real, yff.imag, yft.real, yft.imag
    G_tf, B_tf, G_tt, B_tt = ytf.real, ytf.imag, ytt.real, ytt.imag
    return np.array([
        np.stack([G_ff, G_ft, B_ft], axis=-1),
        np.stack([-B_ff, -B_ft, G_ft], axis=-1),
        np.stack([G_tt, G_tf, -B_tf], axis=-1),
        np.stack([-B_tt, -B_tf, -G_tf], axis=-1),
    ])


def _interval_dot(coef, lo, hi) -> tuple[float, float]:
    coef, lo, hi = map(np.asarray, (coef, lo, hi))
    a, b = coef * lo, coef * hi
    return float(np.sum(np.minimum(a, b))), float(np.sum(np.maximum(a, b)))


def build_qc(net: Network, box: Box | None = None, opts: QCOptions | None = None) -> QCProgram:
    """QC relaxation of ``net`` restricted to ``box``."""
    box = Box.from_network(net) if box is None else box
    opts = QCOptions() if opts is None else opts
    box.check(net)
    A = net.arrays
    n, nl, ng = net.n_bus, net.n_branch, net.n_gen
    b = ProgramBuilder()

    v_lo, v_hi = np.empty(n), np.empty(n)
    for i in range(n):
        v_lo[i], v_hi[i] = widen(float(box.v_lo[i]), float(box.v_hi[i]))
    V = np.array([b.add_var(f"V[{i}]", v_lo[i], v_hi[i]) for i in range(n)])
    w = np.array([b.add_var(f"w[{i}]", v_lo[i] ** 2, v_hi[i] ** 2) for i in range(n)])
    theta = np.array([
        b.add_var(f"theta[{i}]", *((0.0, 0.0) if i == net.ref_index else (-np.inf, np.inf))) for i in range(n)
    ])
    for i in range(n):
        square_envelope(v_lo[i], v_hi[i]).add_to(b, (V[i],), w[i], f"sq[{i}]")

    pg = np.array([b.add_var(f"pg[{g}]", A.p_min[g], A.p_max[g]) for g in range(ng)])
    qg = np.array([b.add_var(f"qg[{g}]", A.q_min[g], A.q_max[g]) for g in range(ng)])

    coeffs = _flow_terms(net)
    td, wlm, C, S, cv, sv = (np.empty(nl, dtype=int) for _ in range(6))
    flows = np.empty((4, nl), dtype=int)
    for k in range(nl):
        f, t = int(A.f[k]), int(A.t[k])
        lo, hi = widen(float(box.th_lo[k]), float(box.th_hi[k]))
        td[k] = b.add_var(f"td[{k}]", lo, hi)
        b.add_linear({td[k]: 1.0, theta[f]: -1.0, theta[t]: 1.0}, EQ, 0.0, f"angle[{k}]")

        w_lo, w_hi = v_lo[f] * v_lo[t], v_hi[f] * v_hi[t]
        wlm[k] = b.add_var(f"wlm[{k}]", w_lo, w_hi)
        mccormick(v_lo[f], v_hi[f], v_lo[t], v_hi[t]).add_to(b, (V[f], V[t]), wlm[k], f"mcw[{k}]")

        s_lo, s_hi, c_lo, c_hi = trig_bounds(lo, hi)
        C[k] = b.add_var(f"C[{k}]", c_lo, c_hi)
        S[k] = b.add_var(f"S[{k}]", s_lo, s_hi)
        cos_envelope(lo, hi).add_to(b, (td[k],), C[k], f"cos[{k}]")
        sin_envelope(lo, hi).add_to(b, (td[k],), S[k], f"sin[{k}]")

        cb = product_bounds(w_lo, w_hi, c_lo, c_hi)
        sb = product_bounds(w_lo, w_hi, s_lo, s_hi)
        cv[k] = b.add_var(f"c[{k}]", *cb)
        sv[k] = b.add_var(f"s[{k}]", *sb)
        mccormick(w_lo, w_hi, c_lo, c_hi).add_to(b, (wlm[k], C[k]), cv[k], f"mcc[{k}]")
        mccormick(w_lo, w_hi, s_lo, s_hi).add_to(b, (wlm[k], S[k]), sv[k], f"mcs[{k}]")

        smax = float(A.s_max[k])
        for e, label in enumerate(("P_lm", "Q_lm", "P_ml", "Q_ml")):
            wself = w[f] if e < 2 else w[t]
            ws_lo, ws_hi = (v_lo[f] ** 2, v_hi[f] ** 2) if e < 2 else (v_lo[t] ** 2, v_hi[t] ** 2)
            co = coeffs[e, k]
            if smax > 0:
                flo, fhi = -smax, smax
            else:
                flo, fhi = _interval_dot(co, [ws_lo, cb[0], sb[0]], [ws_hi, cb[1], sb[1]])
            flows[e, k] = b.add_var(f"{label}[{k}]", flo, fhi)
            b.add_linear({flows[e, k]: 1.0, wself: -co[0], cv[k]: -co[1], sv[k]: -co[2]}, EQ, 0.0,
                         f"{label}[{k}]")
        if smax > 0:
            for e, label in ((0, "lm"), (2, "ml")):
                b.add_cone([Affine.of({flows[e, k]: 1.0}), Affine.of({flows[e + 1, k]: 1.0})],
                           Affine.of({}, smax), f"thermal_{label}[{k}]")
        if opts.jabr_cut:
            b.add_cone(
                [Affine.of({cv[k]: 2.0}), Affine.of({sv[k]: 2.0}), Affine.of({w[f]: 1.0, w[t]: -1.0})],
                Affine.of({w[f]: 1.0, w[t]: 1.0}),
                f"jabr[{k}]",
            )

    for i in range(n):
        tp: dict[int, float] = {w[i]: -float(A.g_sh[i])}
        tq: dict[int, float] = {w[i]: float(A.b_sh[i])}
        for g in np.flatnonzero(A.gen_bus == i):
            tp[pg[g]] = 1.0
            tq[qg[g]] = 1.0
        for k in np.flatnonzero(A.f == i):
            tp[flows[0, k]] = tp.get(flows[0, k], 0.0) - 1.0
            tq[flows[1, k]] = tq.get(flows[1, k], 0.0) - 1.0
        for k in np.flatnonzero(A.t == i):
            tp[flows[2, k]] = tp.get(flows[2, k], 0.0) - 1.0
            tq[flows[3, k]] = tq.get(flows[3, k], 0.0) - 1.0
        b.add_linear(tp, EQ, float(A.p_d[i]), f"balP[{i}]")
        b.add_linear(tq, EQ, float(A.q_d[i]), f"balQ[{i}]")

    b.add_objective(
        lin={int(pg[g]): float(A.c1[g]) for g in range(ng)},
        quad={int(pg[g]): float(A.c2[g]) for g in range(ng) if A.c2[g] > 0},
        const=float(np.sum(A.c0)),
    )
    layout = QCLayout(V, w, theta, td, wlm, C, S, cv, sv, flows, pg, qg)
    return QCProgram(b.build(), layout, box, opts)


def lift(qc: QCProgram, net: Network, pt: OperatingPoint) -> np.ndarray:
    """Image of an AC operating point in the lifted variable space."""
    L = qc.layout
    A = net.arrays
    x = np.zeros(qc.program.n)
    d = pt.theta[A.f] - pt.theta[A.t]
    vv = pt.v[A.f] * pt.v[A.t]
    x[L.V] = pt.v
    x[L.w] = pt.v**2
    x[L.theta] = pt.theta
    x[L.td] = d
    x[L.wlm] = vv
    x[L.C] = np.cos(d)
    x[L.S] = np.sin(d)
    x[L.c] = vv * np.cos(d)
    x[L.s] = vv * np.sin(d)
    fl = branch_flows(net, pt)
    for e in range(4):
        x[L.flows[e]] = fl[e]
    x[L.pg] = pt.pg
    x[L.qg] = pt.qg
    return x
