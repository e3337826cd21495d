"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np

from opfbnb.program import EQ, LE
from opfbnb.qc_relaxation import cos_envelope, mccormick, sin_envelope, square_envelope

HALF_PI = math.pi / 2


def _angle_box(rng):
    lo, hi = np.sort(rng.uniform(-HALF_PI + 1e-6, HALF_PI - 1e-6, 2))
    return float(lo), float(hi)


def envelope_containment(rng, n=100_000):
    """Worst violation of the true function value against each envelope.

    Every sample draws its own interval(s) and a point inside, then asks the
    envelope for the admissible range of the lifted value.  Returns a dict of
    envelope name to worst violation over ``n`` samples.
    """
    worst = {"square": 0.0, "mccormick": 0.0, "sin": 0.0, "cos": 0.0}
    for _ in range(n):
        lo, hi = np.sort(rng.uniform(0.5, 1.5, 2))
        x = rng.uniform(lo, hi)
        worst["square"] = max(worst["square"], square_envelope(lo, hi).violation(x, h=x * x))

        (xl, xh), (yl, yh) = np.sort(rng.uniform(-2, 2, 2)), np.sort(rng.uniform(-2, 2, 2))
        x, y = rng.uniform(xl, xh), rng.uniform(yl, yh)
        worst["mccormick"] = max(worst["mccormick"], mccormick(xl, xh, yl, yh).violation(x, y, h=x * y))

        lo, hi = _angle_box(rng)
        t = rng.uniform(lo, hi)
        worst["sin"] = max(worst["sin"], sin_envelope(lo, hi).violation(t, h=math.sin(t)))
        worst["cos"] = max(worst["cos"], cos_envelope(lo, hi).violation(t, h=math.cos(t)))
    return worst


def endpoint_exactness(rng, n=1000):
    """Worst distance from the forced value at interval endpoints and box corners.

    Square and McCormick pin the lifted value exactly there; the sine and cosine
    chords pin it from one side (the range must still contain the true value).
    """
    worst = 0.0
    for _ in range(n):
        lo, hi = np.sort(rng.uniform(0.5, 1.5, 2))
        env = square_envelope(lo, hi)
        for x in (lo, hi):
            a, b = env.h_range(x)
            worst = max(worst, abs(a - x * x), abs(b - x * x))
        (xl, xh), (yl, yh) = np.sort(rng.uniform(-2, 2, 2)), np.sort(rng.uniform(-2, 2, 2))
        env = mccormick(xl, xh, yl, yh)
        for x in (xl, xh):
            for y in (yl, yh):
                a, b = env.h_range(x, y)
                worst = max(worst, abs(a - x * y), abs(b - x * y))
        lo, hi = _angle_box(rng)
        c_env = cos_envelope(lo, hi)
        for t in (lo, hi):
            a, _ = c_env.h_range(t)
            worst = max(worst, abs(a - math.cos(t)))
        if lo >= 0:
            a, _ = sin_envelope(lo, hi).h_range(lo)
            worst = max(worst, abs(a - math.sin(lo)))
        elif hi <= 0:
            _, b = sin_envelope(lo, hi).h_range(hi)
            worst = max(worst, abs(b - math.sin(hi)))
    return worst


def row_violation(row, x):
    d = row.expr.value(x) - row.rhs
    if row.sense == EQ:
        return abs(d)
    return max(d if row.sense == LE else -d, 0.0)


def newton_two_bus(net, v1, v2_guess=1.0, th_guess=0.0, iters=50):
    """Solve the load bus balance of the 2-bus fixture for (V2, theta2) at fixed V1.

    Returns ``(v2, th2, p_g, q_g)`` or ``None`` when Newton fails to converge.
    """
    br = net.branches[0]
    g, b, bc = br.g, br.b, br.b_c
    pd, qd = net.buses[1].p_d, net.buses[1].q_d

    def flows(v2, th2, v1=v1):
        d = -th2  # theta1 - theta2 with theta1 = 0
        p12 = g * v1**2 - g * v1 * v2 * math.cos(d) - b * v1 * v2 * math.sin(d)
        q12 = -(b + bc / 2) * v1**2 + b * v1 * v2 * math.cos(d) - g * v1 * v2 * math.sin(d)
        p21 = g * v2**2 - g * v2 * v1 * math.cos(d) + b * v2 * v1 * math.sin(d)
        q21 = -(b + bc / 2) * v2**2 + b * v2 * v1 * math.cos(d) + g * v2 * v1 * math.sin(d)
        return p12, q12, p21, q21

    z = np.array([v2_guess, th_guess], float)
    for _ in range(iters):
        _, _, p21, q21 = flows(*z)
        r = np.array([p21 + pd, q21 + qd])
        if np.max(np.abs(r)) < 1e-13:
            p12, q12, _, _ = flows(*z)
            return float(z[0]), float(z[1]), p12, q12
        J = np.empty((2, 2))
        h = 1e-7
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            _, _, pp, qp = flows(*(z + e))
            _, _, pm, qm = flows(*(z - e))
            J[:, j] = [(pp - pm) / (2 * h), (qp - qm) / (2 * h)]
        try:
            z = z - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(z)) or z[0] <= 0:
            return None
    return None
