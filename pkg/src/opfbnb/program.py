"""Convex programs with linear, diagonal-quadratic and second-order-cone rows.

Row kinds:

* linear      ``a . x  (<=|=|>=)  b``
* quadratic   ``sum_k q_k x_{i_k}^2 + a . x <= b`` with every ``q_k >= 0``
* cone        ``|| (a_j . x + b_j)_j ||_2 <= c . x + d``

The objective is ``c . x + sum_i q_i x_i^2 + c0`` with ``q >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LE, EQ, GE = -1, 0, 1
_SENSE_TEXT = {LE: "<=", EQ: "=", GE: ">="}


@dataclass(frozen=True)
class Affine:
    """``coef . x[idx] + const``."""

    idx: np.ndarray
    coef: np.ndarray
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return float(self.coef @ x[self.idx]) + self.const

    @staticmethod
    def of(terms: dict[int, float] | None = None, const: float = 0.0) -> "Affine":
        terms = {k: v for k, v in (terms or {}).items() if v != 0.0}
        idx = np.array(sorted(terms), dtype=int)
        coef = np.array([terms[k] for k in idx], dtype=float)
        return Affine(idx, coef, float(const))


@dataclass(frozen=True)
class LinearRow:
    expr: Affine
    sense: int
    rhs: float
    name: str = ""


@dataclass(frozen=True)
class QuadRow:
    qidx: np.ndarray
    q: np.ndarray
    lin: Affine
    rhs: float
    name: str = ""

    def value(self, x: np.ndarray) -> float:
        """Left side minus right side; <= 0 when satisfied."""
        return float(self.q @ x[self.qidx] ** 2) + self.lin.value(x) - self.rhs

    def gradient(self, x: np.ndarray, n: int) -> np.ndarray:
        g = np.zeros(n)
        np.add.at(g, self.lin.idx, self.lin.coef)
        np.add.at(g, self.qidx, 2 * self.q * x[self.qidx])
        return g


@dataclass(frozen=True)
class ConeRow:
    terms: tuple[Affine, ...]
    bound: Affine
    name: str = ""

    def value(self, x: np.ndarray) -> float:
        u = np.array([t.value(x) for t in self.terms])
        return float(np.linalg.norm(u)) - self.bound.value(x)


@dataclass(frozen=True)
class ConvexProgram:
    names: tuple[str, ...]
    lo: np.ndarray
    hi: np.ndarray
    linear: tuple[LinearRow, ...]
    quadratic: tuple[QuadRow, ...]
    cones: tuple[ConeRow, ...]
    obj_lin: np.ndarray
    obj_quad: np.ndarray
    obj_const: float = 0.0
    index: dict[str, int] = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.names)

    def var(self, name: str) -> int:
        return self.index[name]

    def objective(self, x: np.ndarray) -> float:
        return float(self.obj_lin @ x + self.obj_quad @ (x * x) + self.obj_const)

    def violations(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation per row kind (0 when all rows hold)."""
        x = np.asarray(x, dtype=float)
        bound = float(np.max(np.maximum(self.lo - x, x - self.hi), initial=0.0))
        lin = 0.0
        for r in self.linear:
            d = r.expr.value(x) - r.rhs
            lin = max(lin, abs(d) if r.sense == EQ else d * (1 if r.sense == LE else -1))
        quad = max((r.value(x) for r in self.quadratic), default=0.0)
        cone = max((r.value(x) for r in self.cones), default=0.0)
        return {"bounds": bound, "linear": lin, "quadratic": max(quad, 0.0), "cone": max(cone, 0.0)}

    def max_violation(self, x: np.ndarray) -> float:
        return max(self.violations(x).values())

    def is_convex(self) -> bool:
        return bool(np.all(self.obj_quad >= 0) and all(np.all(r.q >= 0) for r in self.quadratic))

    def to_text(self) -> str:
        """Sparse text dump, one row per line: kind, name, then index:coef pairs."""

        def aff(a: Affine) -> str:
            body = " ".join(f"{i}:{c:.17g}" for i, c in zip(a.idx, a.coef))
            return f"{body} const:{a.const:.17g}" if a.const else body

        out = [f"vars {self.n}"]
        for i, (nm, lo, hi) in enumerate(zip(self.names, self.lo, self.hi)):
            out.append(f"var {i} {nm} {lo:.17g} {hi:.17g}")
        nz = np.flatnonzero(self.obj_lin)
        out.append("obj_lin " + " ".join(f"{i}:{self.obj_lin[i]:.17g}" for i in nz))
        nz = np.flatnonzero(self.obj_quad)
        out.append("obj_quad " + " ".join(f"{i}:{self.obj_quad[i]:.17g}" for i in nz))
        out.append(f"obj_const {self.obj_const:.17g}")
        for r in self.linear:
            out.append(f"lin {r.name} {aff(r.expr)} {_SENSE_TEXT[r.sense]} {r.rhs:.17g}")
        for r in self.quadratic:
            sq = " ".join(f"{i}^2:{c:.17g}" for i, c in zip(r.qidx, r.q))
            out.append(f"quad {r.name} {sq} {aff(r.lin)} <= {r.rhs:.17g}")
        for r in self.cones:
            terms = " | ".join(aff(t) for t in r.terms)
            out.append(f"cone {r.name} [{terms}] <= {aff(r.bound)}")
        return "\n".join(out) + "\n"


class ProgramBuilder:
    def __init__(self):
        self.names: list[str] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.linear: list[LinearRow] = []
        self.quadratic: list[QuadRow] = []
        self.cones: list[ConeRow] = []
        self.obj_lin: dict[int, float] = {}
        self.obj_quad: dict[int, float] = {}
        self.obj_const = 0.0
        self.index: dict[str, int] = {}

    def add_var(self, name: str, lo: float = -np.inf, hi: float = np.inf) -> int:
        if name in self.index:
            raise ValueError(f"duplicate variable {name}")
        if lo > hi:
            raise ValueError(f"variable {name}: lo {lo} > hi {hi}")
        k = len(self.names)
        self.names.append(name)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.index[name] = k
        return k

    def add_linear(self, terms: dict[int, float], sense: int, rhs: float, name: str = "") -> None:
        self.linear.append(LinearRow(Affine.of(terms), sense, float(rhs), name))

    def add_quadratic(self, squares: dict[int, float], terms: dict[int, float], rhs: float, name: str = "") -> None:
        if any(q < 0 for q in squares.values()):
            raise ValueError("quadratic row with negative curvature")
        qidx = np.array(sorted(squares), dtype=int)
        q = np.array([squares[k] for k in qidx], dtype=float)
        self.quadratic.append(QuadRow(qidx, q, Affine.of(terms), float(rhs), name))

    def add_cone(self, terms: list[Affine], bound: Affine, name: str = "") -> None:
        self.cones.append(ConeRow(tuple(terms), bound, name))

    def add_objective(self, lin: dict[int, float] | None = None, quad: dict[int, float] | None = None,
                      const: float = 0.0) -> None:
        for k, v in (lin or {}).items():
            self.obj_lin[k] = self.obj_lin.get(k, 0.0) + v
        for k, v in (quad or {}).items():
            if v < 0:
                raise ValueError("objective curvature must be nonnegative")
            self.obj_quad[k] = self.obj_quad.get(k, 0.0) + v
        self.obj_const += const

    def build(self) -> ConvexProgram:
        n = len(self.names)
        c = np.zeros(n)
        q = np.zeros(n)
        for k, v in self.obj_lin.items():
            c[k] = v
        for k, v in self.obj_quad.items():
            q[k] = v
        return ConvexProgram(
            names=tuple(self.names),
            lo=np.array(self.lo),
            hi=np.array(self.hi),
            linear=tuple(self.linear),
            quadratic=tuple(self.quadratic),
            cones=tuple(self.cones),
            obj_lin=c,
            obj_quad=q,
            obj_const=self.obj_const,
            index=dict(self.index),
        )
