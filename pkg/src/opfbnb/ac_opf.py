"""Polar AC-OPF: cost, branch flows, nodal balances, feasibility and a local solver.

Branch flows use the transformer Pi-model of :meth:`Branch.pi_model`, which for
unit tap and zero shift reduces to

    P_lm = g V_l^2 - g V_l V_m cos(d) - b V_l V_m sin(d)
    Q_lm = -(b + b_c/2) V_l^2 + b V_l V_m cos(d) - g V_l V_m sin(d)

with ``d = theta_l - theta_m``.  Each of the four end flows has the generic form
``a V_self^2 + V_l V_m (alpha cos d + beta sin d)``, which is what the
derivative code below works with.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .case_model import Network

log = logging.getLogger(__name__)

# Angle limits at or beyond this magnitude are treated as absent in the NLP.
_NO_ANGLE_LIMIT = 2 * math.pi - 1e-9


class LocalSolveFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    v: np.ndarray
    theta: np.ndarray
    pg: np.ndarray
    qg: np.ndarray

    def to_dict(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)] for k in ("v", "theta", "pg", "qg")}

    @classmethod
    def from_dict(cls, d: dict) -> "OperatingPoint":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("v", "theta", "pg", "qg")))

    @classmethod
    def flat(cls, net: Network) -> "OperatingPoint":
        a = net.arrays
        return cls(
            v=np.ones(net.n_bus),
            theta=np.zeros(net.n_bus),
            pg=(a.p_min + a.p_max) / 2,
            qg=(a.q_min + a.q_max) / 2,
        )


@dataclass(frozen=True)
class FeasibilityReport:
    max_balance_violation: float
    max_bound_violation: float
    max_thermal_violation: float
    tol: float

    @property
    def is_feasible(self) -> bool:
        return max(self.max_balance_violation, self.max_bound_violation, self.max_thermal_violation) <= self.tol

    def to_dict(self) -> dict:
        return {
            "max_balance_violation": self.max_balance_violation,
            "max_bound_violation": self.max_bound_violation,
            "max_thermal_violation": self.max_thermal_violation,
            "tol": self.tol,
            "is_feasible": self.is_feasible,
        }


def _check_point(net: Network, pt: OperatingPoint) -> None:
    for name, arr, n in (("v", pt.v, net.n_bus), ("theta", pt.theta, net.n_bus),
                         ("pg", pt.pg, net.n_gen), ("qg", pt.qg, net.n_gen)):
        if np.shape(arr) != (n,):
            raise ValueError(f"{name} has shape {np.shape(arr)}, expected ({n},)")


def cost(net: Network, pg) -> float:
    pg = np.asarray(pg, dtype=float)
    if pg.shape != (net.n_gen,):
        raise ValueError(f"pg has shape {pg.shape}, expected ({net.n_gen},)")
    a = net.arrays
    return float(np.sum(a.c2 * pg * pg + a.c1 * pg + a.c0))


# ---------------------------------------------------------------------------
# flows


def _flow_coeffs(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients ``(a, self_is_from, alpha, beta)`` of shape (4, n_branch).

    Rows are P_lm, Q_lm, P_ml, Q_ml.
    """
    A = net.arrays
    yff, yft, ytf, ytt = A.y_ff, A.y_ft, A.y_tf, A.y_tt
    a = np.array([yff.real, -yff.imag, ytt.real, -ytt.imag])
    alpha = np.array([yft.real, -yft.imag, ytf.real, -ytf.imag])
    beta = np.array([yft.imag, yft.real, -ytf.imag, -ytf.real])
    self_from = np.array([True, True, False, False])
    return a, self_from, alpha, beta


def _all_flows(net: Network, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    A = net.arrays
    a, self_from, alpha, beta = _flow_coeffs(net)
    vf, vt = v[A.f], v[A.t]
    d = theta[A.f] - theta[A.t]
    vself = np.where(self_from[:, None], vf, vt)
    return a * vself**2 + vf * vt * (alpha * np.cos(d) + beta * np.sin(d))


def branch_flow(net: Network, pt: OperatingPoint, branch: int) -> tuple[float, float, float, float]:
    """``(P_lm, Q_lm, P_ml, Q_ml)`` of branch index ``branch``."""
    _check_point(net, pt)
    flows = _all_flows(net, pt.v, pt.theta)
    return tuple(float(x) for x in flows[:, branch])


def branch_flows(net: Network, pt: OperatingPoint) -> np.ndarray:
    """All end flows, shape (4, n_branch), rows P_lm, Q_lm, P_ml, Q_ml."""
    _check_point(net, pt)
    return _all_flows(net, pt.v, pt.theta)


def balance_residual(net: Network, pt: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    _check_point(net, pt)
    A = net.arrays
    fl = _all_flows(net, pt.v, pt.theta)
    dp = -A.p_d - A.g_sh * pt.v**2
    dq = -A.q_d + A.b_sh * pt.v**2
    dp = dp + np.bincount(A.gen_bus, pt.pg, net.n_bus)
    dq = dq + np.bincount(A.gen_bus, pt.qg, net.n_bus)
    dp -= np.bincount(A.f, fl[0], net.n_bus) + np.bincount(A.t, fl[2], net.n_bus)
    dq -= np.bincount(A.f, fl[1], net.n_bus) + np.bincount(A.t, fl[3], net.n_bus)
    return dp, dq


def check_feasible(net: Network, pt: OperatingPoint, tol: float = 1e-6) -> FeasibilityReport:
    if not tol > 0:
        raise ValueError("tol must be positive")
    _check_point(net, pt)
    A = net.arrays
    dp, dq = balance_residual(net, pt)
    bal = float(max(np.max(np.abs(dp), initial=0.0), np.max(np.abs(dq), initial=0.0)))

    def over(x, lo, hi):
        return np.max(np.maximum(lo - x, x - hi), initial=0.0)

    lo, hi = net.angle_limits(clamp=False)
    d = pt.theta[A.f] - pt.theta[A.t]
    bound = max(
        over(pt.v, A.v_min, A.v_max),
        over(pt.pg, A.p_min, A.p_max),
        over(pt.qg, A.q_min, A.q_max),
        over(d, lo, hi),
        abs(pt.theta[net.ref_index]),
        0.0,
    )

    thermal = 0.0
    rated = A.s_max > 0
    if np.any(rated):
        fl = _all_flows(net, pt.v, pt.theta)
        s_from = np.hypot(fl[0], fl[1])[rated]
        s_to = np.hypot(fl[2], fl[3])[rated]
        thermal = float(max(np.max(s_from - A.s_max[rated]), np.max(s_to - A.s_max[rated]), 0.0))
    return FeasibilityReport(bal, float(bound), thermal, tol)


# ---------------------------------------------------------------------------
# local solver


class _Problem:
    """Polar AC-OPF in the form min f(x) s.t. g(x) = 0, h(x) <= 0.

    x = [theta (n), V (n), Pg (ng), Qg (ng)].
    """

    def __init__(self, net: Network, cost_scale: float):
        self.net = net
        A = net.arrays
        n, ng = net.n_bus, net.n_gen
        self.n, self.ng = n, ng
        self.nx = 2 * n + 2 * ng
        self.it, self.iv = np.arange(n), n + np.arange(n)
        self.ip, self.iq = 2 * n + np.arange(ng), 2 * n + ng + np.arange(ng)
        self.cost_scale = cost_scale
        self.coef = _flow_coeffs(net)
        # local variable order per branch: theta_f, theta_t, V_f, V_t
        self.loc = np.stack([A.f, A.t, n + A.f, n + A.t], axis=1)

        # linear pieces: bounds as equalities (fixed) or inequalities
        lo = np.concatenate([np.full(n, -np.inf), A.v_min, A.p_min, A.q_min])
        hi = np.concatenate([np.full(n, np.inf), A.v_max, A.p_max, A.q_max])
        lo[net.ref_index] = hi[net.ref_index] = 0.0
        fixed = np.isfinite(lo) & (lo == hi)
        self.eq_lin_idx = np.flatnonzero(fixed)
        self.eq_lin_val = lo[fixed]
        free = ~fixed
        self.ub_idx = np.flatnonzero(free & np.isfinite(hi))
        self.ub_val = hi[self.ub_idx]
        self.lb_idx = np.flatnonzero(free & np.isfinite(lo))
        self.lb_val = lo[self.lb_idx]

        alo, ahi = net.angle_limits(clamp=False)
        self.amax_br = np.flatnonzero(ahi < _NO_ANGLE_LIMIT)
        self.amin_br = np.flatnonzero(alo > -_NO_ANGLE_LIMIT)
        self.amax_val, self.amin_val = ahi[self.amax_br], alo[self.amin_br]
        self.rated = np.flatnonzero(A.s_max > 0)

        self.neq = 2 * n + len(self.eq_lin_idx)
        self.n_lin_ineq = len(self.ub_idx) + len(self.lb_idx) + len(self.amax_br) + len(self.amin_br)
        self.niq = self.n_lin_ineq + 2 * len(self.rated)

        Jl = np.zeros((self.n_lin_ineq, self.nx))
        r = 0
        for idx, sign in ((self.ub_idx, 1.0), (self.lb_idx, -1.0)):
            Jl[r + np.arange(len(idx)), idx] = sign
            r += len(idx)
        for brs, sign in ((self.amax_br, 1.0), (self.amin_br, -1.0)):
            Jl[r + np.arange(len(brs)), A.f[brs]] = sign
            Jl[r + np.arange(len(brs)), A.t[brs]] = -sign
            r += len(brs)
        self.J_lin = Jl
        self.rhs_lin = np.concatenate([self.ub_val, -self.lb_val, self.amax_val, -self.amin_val])

    def split(self, x):
        return x[self.it], x[self.iv], x[self.ip], x[self.iq]

    def point(self, x) -> OperatingPoint:
        th, v, pg, qg = self.split(x)
        return OperatingPoint(v.copy(), th.copy(), pg.copy(), qg.copy())

    def pack(self, pt: OperatingPoint) -> np.ndarray:
        return np.concatenate([pt.theta, pt.v, pt.pg, pt.qg]).astype(float)

    # -- objective
    def f(self, x):
        A = self.net.arrays
        pg = x[self.ip]
        val = np.sum(A.c2 * pg * pg + A.c1 * pg + A.c0)
        grad = np.zeros(self.nx)
        grad[self.ip] = 2 * A.c2 * pg + A.c1
        hess_diag = np.zeros(self.nx)
        hess_diag[self.ip] = 2 * A.c2
        s = self.cost_scale
        return val * s, grad * s, hess_diag * s

    # -- flows with derivatives w.r.t. the 4 local variables of each branch
    def flows(self, x):
        A = self.net.arrays
        th, v = x[self.it], x[self.iv]
        a, self_from, alpha, beta = self.coef
        vf, vt = v[A.f], v[A.t]
        d = th[A.f] - th[A.t]
        c, s = np.cos(d), np.sin(d)
        T = alpha * c + beta * s
        Tp = -alpha * s + beta * c
        sf = self_from[:, None].astype(float)
        vself = np.where(self_from[:, None], vf, vt)
        F = a * vself**2 + vf * vt * T
        # gradient, shape (4, nl, 4)
        G = np.empty(F.shape + (4,))
        G[..., 0] = vf * vt * Tp
        G[..., 1] = -vf * vt * Tp
        G[..., 2] = 2 * a * vf * sf + vt * T
        G[..., 3] = 2 * a * vt * (1 - sf) + vf * T
        # hessian, shape (4, nl, 4, 4)
        H = np.zeros(F.shape + (4, 4))
        vv = vf * vt
        H[..., 0, 0] = H[..., 1, 1] = -vv * T
        H[..., 0, 1] = H[..., 1, 0] = vv * T
        H[..., 0, 2] = H[..., 2, 0] = vt * Tp
        H[..., 0, 3] = H[..., 3, 0] = vf * Tp
        H[..., 1, 2] = H[..., 2, 1] = -vt * Tp
        H[..., 1, 3] = H[..., 3, 1] = -vf * Tp
        H[..., 2, 2] = 2 * a * sf
        H[..., 3, 3] = 2 * a * (1 - sf)
        H[..., 2, 3] = H[..., 3, 2] = T
        return F, G, H

    def _scatter_rows(self, rows, loc, G, nrows):
        J = np.zeros((nrows, self.nx))
        np.add.at(J, (np.repeat(rows, 4), loc.ravel()), G.reshape(-1))
        return J

    def _scatter_hess(self, loc, H, w):
        """sum_k w_k H_k placed at the branch-local indices."""
        Hx = np.zeros((self.nx, self.nx))
        weighted = H * w[:, None, None]
        ii = np.repeat(loc, 4, axis=1)
        jj = np.tile(loc, (1, 4))
        np.add.at(Hx, (ii.ravel(), jj.ravel()), weighted.reshape(-1))
        return Hx

    def constraints(self, x, F, G):
        A = self.net.arrays
        n, nl = self.n, self.net.n_branch
        th, v, pg, qg = self.split(x)
        # equalities: P balance (n), Q balance (n), fixed variables
        gP = np.bincount(A.gen_bus, pg, n) - A.p_d - A.g_sh * v**2
        gQ = np.bincount(A.gen_bus, qg, n) - A.q_d + A.b_sh * v**2
        gP -= np.bincount(A.f, F[0], n) + np.bincount(A.t, F[2], n)
        gQ -= np.bincount(A.f, F[1], n) + np.bincount(A.t, F[3], n)
        geq = np.concatenate([gP, gQ, x[self.eq_lin_idx] - self.eq_lin_val])

        Jg = np.zeros((self.neq, self.nx))
        rows_P = np.concatenate([A.f, A.t])
        for k, (fr, to) in enumerate(((0, 2), (1, 3))):
            off = k * n
            Gk = np.concatenate([G[fr], G[to]], axis=0)
            loc = np.concatenate([self.loc, self.loc], axis=0)
            Jg[: 2 * n] -= self._scatter_rows(off + rows_P, loc, Gk, 2 * n)
        for j, b in enumerate(A.gen_bus):
            Jg[b, self.ip[j]] += 1.0
            Jg[n + b, self.iq[j]] += 1.0
        Jg[np.arange(n), self.iv] += -2 * A.g_sh * v
        Jg[n + np.arange(n), self.iv] += 2 * A.b_sh * v
        Jg[2 * n + np.arange(len(self.eq_lin_idx)), self.eq_lin_idx] = 1.0

        # inequalities: linear then thermal (from ends, to ends)
        h_lin = self.J_lin @ x - self.rhs_lin
        r = self.rated
        smax2 = A.s_max[r] ** 2
        h_th = np.concatenate([F[0, r] ** 2 + F[1, r] ** 2 - smax2, F[2, r] ** 2 + F[3, r] ** 2 - smax2])
        h = np.concatenate([h_lin, h_th])
        Jh = np.zeros((self.niq, self.nx))
        Jh[: self.n_lin_ineq] = self.J_lin
        nr = len(r)
        for k, (p, q) in enumerate(((0, 1), (2, 3))):
            Gt = 2 * F[p, r, None] * G[p, r] + 2 * F[q, r, None] * G[q, r]
            rows = self.n_lin_ineq + k * nr + np.arange(nr)
            Jh[rows] = self._scatter_rows(np.arange(nr), self.loc[r], Gt, nr)
        del nl
        return geq, Jg, h, Jh

    def lagrangian_hessian(self, x, F, G, H, lam, mu):
        A = self.net.arrays
        n = self.n
        _, _, hd = self.f(x)
        Lxx = np.diag(hd)
        v = x[self.iv]
        lamP, lamQ = lam[:n], lam[n : 2 * n]
        # balance terms: -(flows) and shunts
        wP = np.stack([lamP[A.f], lamQ[A.f], lamP[A.t], lamQ[A.t]])
        Hsum = -np.einsum("kl,klij->lij", wP, H)
        Lxx += self._scatter_hess(self.loc, Hsum, np.ones(self.net.n_branch))
        Lxx[self.iv, self.iv] += -2 * A.g_sh * lamP + 2 * A.b_sh * lamQ
        # thermal terms
        r = self.rated
        nr = len(r)
        if nr:
            mu_th = mu[self.n_lin_ineq :]
            for k, (p, q) in enumerate(((0, 1), (2, 3))):
                m = mu_th[k * nr : (k + 1) * nr]
                Gp, Gq = G[p, r], G[q, r]
                Ht = 2 * (
                    np.einsum("li,lj->lij", Gp, Gp)
                    + F[p, r, None, None] * H[p, r]
                    + np.einsum("li,lj->lij", Gq, Gq)
                    + F[q, r, None, None] * H[q, r]
                )
                Lxx += self._scatter_hess(self.loc[r], Ht, m)
        del v
        return Lxx


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    feascond: float
    gradcond: float
    compcond: float
    costcond: float


def _ipm(prob: _Problem, x0: np.ndarray, max_iter: int = 200, tol: float = 1e-8,
         xi: float = 0.99995, sigma: float = 0.1) -> tuple[np.ndarray, SolveInfo]:
    """Primal-dual interior point method for min f s.t. g = 0, h <= 0."""
    x = x0.copy()
    f, df, _ = prob.f(x)
    F, G, H = prob.flows(x)
    g, Jg, h, Jh = prob.constraints(x, F, G)
    niq, neq = len(h), len(g)
    z0 = 1.0
    z = np.full(niq, z0)
    k = h < -z0
    z[k] = -h[k]
    gamma = 1.0
    mu = gamma / z
    lam = np.zeros(neq)
    f0 = f
    info = SolveInfo(False, 0, np.inf, np.inf, np.inf, np.inf)

    def conds(x, f, df, g, Jg, h, Jh, lam, mu, z, fprev):
        Lx = df + Jg.T @ lam + Jh.T @ mu
        maxh = np.max(h, initial=0.0)
        nx = np.max(np.abs(x))
        feas = max(np.max(np.abs(g), initial=0.0), maxh) / (1 + max(nx, np.max(np.abs(z), initial=0.0)))
        grad = np.max(np.abs(Lx)) / (1 + max(np.max(np.abs(lam), initial=0.0), np.max(np.abs(mu), initial=0.0)))
        comp = float(z @ mu) / (1 + nx)
        costc = abs(f - fprev) / (1 + abs(fprev))
        return feas, grad, comp, costc

    for it in range(1, max_iter + 1):
        Lxx = prob.lagrangian_hessian(x, F, G, H, lam, mu)
        Lx = df + Jg.T @ lam + Jh.T @ mu
        zinv = 1.0 / z
        dh_zinv = Jh.T * zinv
        M = Lxx + (dh_zinv * mu) @ Jh
        N = Lx + dh_zinv @ (mu * h + gamma)
        K = np.block([[M, Jg.T], [Jg, np.zeros((neq, neq))]])
        rhs = -np.concatenate([N, g])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if not np.all(np.isfinite(sol)):
            break
        dx, dlam = sol[: prob.nx], sol[prob.nx :]
        dz = -h - z - Jh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        neg = dz < 0
        alphap = min(xi * np.min(-z[neg] / dz[neg]), 1.0) if np.any(neg) else 1.0
        neg = dmu < 0
        alphad = min(xi * np.min(-mu[neg] / dmu[neg]), 1.0) if np.any(neg) else 1.0

        x = x + alphap * dx
        z = z + alphap * dz
        lam = lam + alphad * dlam
        mu = mu + alphad * dmu
        if niq:
            gamma = sigma * float(z @ mu) / niq

        fprev = f
        f, df, _ = prob.f(x)
        F, G, H = prob.flows(x)
        g, Jg, h, Jh = prob.constraints(x, F, G)
        feas, grad, comp, costc = conds(x, f, df, g, Jg, h, Jh, lam, mu, z, fprev)
        info = SolveInfo(False, it, feas, grad, comp, costc)
        if not all(np.isfinite([feas, grad, comp])) or np.max(np.abs(x)) > 1e10:
            break
        if feas < tol and grad < tol and comp < tol and costc < tol:
            info.converged = True
            break
    del f0
    return x, info


def _polish(net: Network, pt: OperatingPoint) -> OperatingPoint:
    """Clip box-bounded variables onto their bounds (removes interior-point slack noise)."""
    A = net.arrays
    theta = pt.theta - pt.theta[net.ref_index]
    return OperatingPoint(
        np.clip(pt.v, A.v_min, A.v_max),
        theta,
        np.clip(pt.pg, A.p_min, A.p_max),
        np.clip(pt.qg, A.q_min, A.q_max),
    )


def local_solve(net: Network, start: OperatingPoint | None = None, tol: float = 1e-6,
                max_iter: int = 300) -> tuple[OperatingPoint, float]:
    """Locally optimal AC-feasible operating point and its cost.

    Tries the supplied start (or a flat start), then a mid-box voltage start.
    """
    A = net.arrays
    starts = []
    if start is not None:
        _check_point(net, start)
        starts.append(start)
    starts.append(OperatingPoint.flat(net))
    starts.append(OperatingPoint(
        v=(A.v_min + A.v_max) / 2, theta=np.zeros(net.n_bus),
        pg=A.p_min + 0.25 * (A.p_max - A.p_min), qg=np.zeros(net.n_gen),
    ))
    scale = 1.0 / max(1.0, abs(cost(net, starts[0].pg)))
    prob = _Problem(net, scale)

    for k, st in enumerate(starts):
        x, info = _ipm(prob, prob.pack(st), max_iter=max_iter, tol=min(tol, 1e-8) * 1e-1)
        pt = _polish(net, prob.point(x))
        rep = check_feasible(net, pt, tol)
        log.debug("local solve start %d: %s feasible=%s", k, info, rep.is_feasible)
        if rep.is_feasible and info.gradcond <= tol:
            return pt, cost(net, pt.pg)
    raise LocalSolveFailed(f"no feasible local optimum for {net.name or 'network'}")
