"""Power network data: MATPOWER-style case parsing, validation and per-unit model.

All quantities held by :class:`Network` are per-unit on ``base_mva``; angles are
radians.  Generator cost coefficients are rescaled so that evaluating the
polynomial on per-unit dispatch yields the same $/hr as the raw file does on MW.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

# Angle-difference limits beyond this magnitude are clamped for the envelopes.
ANGLE_CLAMP = math.pi / 2 - 1e-6


class CaseError(ValueError):
    """Base class for case-file problems."""


class MalformedSection(CaseError):
    pass


class UnknownBusReference(CaseError):
    pass


class NoReferenceBus(CaseError):
    pass


class NonPositiveBase(CaseError):
    pass


class ZeroImpedance(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float
    v_max: float
    g_sh: float = 0.0
    b_sh: float = 0.0
    p_d: float = 0.0
    q_d: float = 0.0
    is_ref: bool = False


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    g: float
    b: float
    b_c: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    s_max: float = 0.0
    ang_min: float = -2 * math.pi
    ang_max: float = 2 * math.pi
    r: float = 0.0
    x: float = 0.0

    @property
    def rated(self) -> bool:
        return self.s_max > 0.0

    def pi_model(self) -> tuple[complex, complex, complex, complex]:
        """Return ``(Y_ff, Y_ft, Y_tf, Y_tt)`` of the transformer Pi-model."""
        y = complex(self.g, self.b)
        t = self.tap * complex(math.cos(self.shift), math.sin(self.shift))
        ysh = complex(0.0, self.b_c / 2)
        y_ff = (y + ysh) / (self.tap**2)
        y_ft = -y / t.conjugate()
        y_tf = -y / t
        y_tt = y + ysh
        return y_ff, y_ft, y_tf, y_tt


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


@dataclass(frozen=True)
class Violation:
    """One broken invariant: ``rule`` names it, ``entity`` says where."""

    rule: str
    entity: str
    detail: str = ""

    def __str__(self) -> str:
        text = f"{self.rule}({self.entity})"
        return f"{text}: {self.detail}" if self.detail else text


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    name: str = field(default="", compare=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @cached_property
    def ref_index(self) -> int:
        refs = [i for i, bus in enumerate(self.buses) if bus.is_ref]
        if not refs:
            raise NoReferenceBus("network has no reference bus")
        return refs[0]

    @cached_property
    def arrays(self) -> "NetworkArrays":
        return NetworkArrays.from_network(self)

    def angle_limits(self, clamp: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Per-branch angle-difference bounds, optionally clamped to +-(pi/2 - 1e-6)."""
        lo = np.array([br.ang_min for br in self.branches], dtype=float)
        hi = np.array([br.ang_max for br in self.branches], dtype=float)
        if clamp:
            lo = np.clip(lo, -ANGLE_CLAMP, ANGLE_CLAMP)
            hi = np.clip(hi, -ANGLE_CLAMP, ANGLE_CLAMP)
        return lo, hi


@dataclass(frozen=True)
class NetworkArrays:
    """Vectorised view of a network used by the numerical modules."""

    f: np.ndarray  # from-bus index per branch
    t: np.ndarray  # to-bus index per branch
    gen_bus: np.ndarray
    y_ff: np.ndarray
    y_ft: np.ndarray
    y_tf: np.ndarray
    y_tt: np.ndarray
    s_max: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    g_sh: np.ndarray
    b_sh: np.ndarray
    p_d: np.ndarray
    q_d: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "NetworkArrays":
        idx = net.bus_index
        pis = [br.pi_model() for br in net.branches]
        cplx = lambda k: np.array([p[k] for p in pis], dtype=complex)  # noqa: E731
        gens = net.generators
        return cls(
            f=np.array([idx[br.from_bus] for br in net.branches], dtype=int),
            t=np.array([idx[br.to_bus] for br in net.branches], dtype=int),
            gen_bus=np.array([idx[g.bus] for g in gens], dtype=int),
            y_ff=cplx(0),
            y_ft=cplx(1),
            y_tf=cplx(2),
            y_tt=cplx(3),
            s_max=np.array([br.s_max for br in net.branches], dtype=float),
            v_min=np.array([b.v_min for b in net.buses], dtype=float),
            v_max=np.array([b.v_max for b in net.buses], dtype=float),
            g_sh=np.array([b.g_sh for b in net.buses], dtype=float),
            b_sh=np.array([b.b_sh for b in net.buses], dtype=float),
            p_d=np.array([b.p_d for b in net.buses], dtype=float),
            q_d=np.array([b.q_d for b in net.buses], dtype=float),
            p_min=np.array([g.p_min for g in gens], dtype=float),
            p_max=np.array([g.p_max for g in gens], dtype=float),
            q_min=np.array([g.q_min for g in gens], dtype=float),
            q_max=np.array([g.q_max for g in gens], dtype=float),
            c2=np.array([g.c2 for g in gens], dtype=float),
            c1=np.array([g.c1 for g in gens], dtype=float),
            c0=np.array([g.c0 for g in gens], dtype=float),
        )


def series_admittance(r: float, x: float) -> tuple[float, float]:
    """Return ``(g, b)`` with ``g + jb = 1 / (r + jx)``."""
    if r == 0.0 and x == 0.0:
        raise ZeroImpedance("branch has r = x = 0")
    y = 1.0 / complex(r, x)
    return y.real, y.imag


def effective_admittance(
    br: "Branch | float",
    x: float | None = None,
    b_c: float = 0.0,
    tap: float = 1.0,
    shift: float = 0.0,
) -> tuple[float, float, float]:
    """From-side mutual admittance and charging of a (possibly off-nominal) branch.

    Accepts either a :class:`Branch` or raw ``(r, x, b_c, tap, shift)``.  Returns
    ``(g, b, b_c)`` where ``g + jb`` is the negated from-to entry of the branch
    admittance matrix with the phase rotation removed, i.e. the series admittance
    divided by the tap.  With ``tap = 1`` a Branch maps to its own ``(g, b, b_c)``.
    """
    if isinstance(br, Branch):
        g, b, b_c, tap = br.g, br.b, br.b_c, br.tap
    else:
        if x is None:
            raise TypeError("x is required when r is given")
        g, b = series_admittance(float(br), x)
    if not tap > 0:
        raise ValueError("tap must be positive")
    return g / tap, b / tap, b_c


# ---------------------------------------------------------------------------
# parsing

_COMMENT = re.compile(r"%[^\n]*")
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")
_MATRIX = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.DOTALL)

BUS_COLS = 13
GEN_COLS = 10
BRANCH_COLS = 11  # angmin/angmax (cols 12-13) are optional


def _matrix(body: str, name: str) -> list[list[float]]:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk) if tok])
        except ValueError as exc:
            raise MalformedSection(f"non-numeric entry in mpc.{name}: {chunk!r}") from exc
    if rows and len({len(r) for r in rows}) != 1:
        raise MalformedSection(f"ragged matrix mpc.{name}")
    return rows


def _sections(text: str) -> tuple[dict[str, float], dict[str, list[list[float]]]]:
    clean = _COMMENT.sub("", text)
    scalars = {m.group(1): float(m.group(2)) for m in _SCALAR.finditer(clean)}
    matrices = {m.group(1): _matrix(m.group(2), m.group(1)) for m in _MATRIX.finditer(clean)}
    return scalars, matrices


def _require(matrices, name: str, min_cols: int) -> list[list[float]]:
    rows = matrices.get(name)
    if not rows:
        raise MalformedSection(f"missing or empty section mpc.{name}")
    if len(rows[0]) < min_cols:
        raise MalformedSection(f"mpc.{name} needs at least {min_cols} columns, got {len(rows[0])}")
    return rows


def _angle_limits(row: list[float]) -> tuple[float, float]:
    if len(row) < 13:
        return -2 * math.pi, 2 * math.pi
    lo, hi = row[11], row[12]
    if lo == 0.0 and hi == 0.0:
        return -2 * math.pi, 2 * math.pi
    return math.radians(lo), math.radians(hi)


def _cost(row: list[float], base: float) -> tuple[float, float, float]:
    model = int(row[0])
    if model != 2:
        raise MalformedSection("only polynomial (model 2) generator costs are supported")
    n = int(row[3])
    coeffs = row[4 : 4 + n]
    if len(coeffs) != n:
        raise MalformedSection("gencost row shorter than its declared degree")
    if n > 3:
        raise MalformedSection(f"polynomial cost of degree {n - 1} is not supported")
    c2, c1, c0 = ([0.0] * (3 - n) + coeffs) if n else (0.0, 0.0, 0.0)
    return c2 * base * base, c1 * base, c0


def parse_case(text: str, name: str = "") -> Network:
    """Parse MATPOWER case text into a per-unit :class:`Network`."""
    scalars, matrices = _sections(text)
    if "baseMVA" not in scalars:
        raise MalformedSection("missing mpc.baseMVA")
    base = scalars["baseMVA"]
    if not base > 0:
        raise NonPositiveBase(f"baseMVA must be positive, got {base}")

    bus_rows = _require(matrices, "bus", BUS_COLS)
    gen_rows = _require(matrices, "gen", GEN_COLS)
    branch_rows = _require(matrices, "branch", BRANCH_COLS)
    cost_rows = _require(matrices, "gencost", 4)
    if len(cost_rows) < len(gen_rows):
        raise MalformedSection("mpc.gencost has fewer rows than mpc.gen")

    buses = tuple(
        Bus(
            id=int(r[0]),
            v_min=r[12],
            v_max=r[11],
            g_sh=r[4] / base,
            b_sh=r[5] / base,
            p_d=r[2] / base,
            q_d=r[3] / base,
            is_ref=int(r[1]) == 3,
        )
        for r in bus_rows
    )
    ids = {b.id for b in buses}
    if not any(b.is_ref for b in buses):
        raise NoReferenceBus("no bus of type 3")

    gens = []
    for r, cost in zip(gen_rows, cost_rows):
        if int(r[0]) not in ids:
            raise UnknownBusReference(f"generator at unknown bus {int(r[0])}")
        if r[7] <= 0:
            continue
        c2, c1, c0 = _cost(cost, base)
        gens.append(
            Generator(
                bus=int(r[0]),
                p_min=r[9] / base,
                p_max=r[8] / base,
                q_min=r[4] / base,
                q_max=r[3] / base,
                c2=c2,
                c1=c1,
                c0=c0,
            )
        )

    branches = []
    for r in branch_rows:
        f, t = int(r[0]), int(r[1])
        if f not in ids or t not in ids:
            raise UnknownBusReference(f"branch {f}-{t} references an unknown bus")
        if r[10] <= 0:
            continue
        g, b = series_admittance(r[2], r[3])
        lo, hi = _angle_limits(r)
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                g=g,
                b=b,
                b_c=r[4],
                tap=r[8] if r[8] != 0.0 else 1.0,
                shift=math.radians(r[9]),
                s_max=r[5] / base,
                ang_min=lo,
                ang_max=hi,
                r=r[2],
                x=r[3],
            )
        )

    return Network(base, buses, tuple(branches), tuple(gens), name=name)


def load_case(path: str | Path) -> Network:
    path = Path(path)
    name = path.stem
    if name.startswith("pglib_opf_"):
        name = name[len("pglib_opf_"):]
    return parse_case(path.read_text(), name=name)


# ---------------------------------------------------------------------------
# validation


def validate(net: Network) -> list[Violation]:
    out: list[Violation] = []
    seen: set[int] = set()
    for bus in net.buses:
        ent = f"bus {bus.id}"
        if bus.id in seen:
            out.append(Violation("DuplicateBusId", ent))
        seen.add(bus.id)
        if not bus.v_min > 0:
            out.append(Violation("NonPositiveVoltageBound", ent, f"v_min={bus.v_min}"))
        if bus.v_min > bus.v_max:
            out.append(Violation("VoltageBoundsInverted", ent, f"{bus.v_min} > {bus.v_max}"))
    n_ref = sum(b.is_ref for b in net.buses)
    if n_ref == 0:
        out.append(Violation("NoReferenceBus", "network"))
    elif n_ref > 1:
        out.append(Violation("MultipleReferenceBuses", "network", f"{n_ref} reference buses"))

    for k, br in enumerate(net.branches):
        ent = f"branch {k} ({br.from_bus}-{br.to_bus})"
        if br.from_bus not in seen or br.to_bus not in seen:
            out.append(Violation("UnknownBusReference", ent))
        if br.ang_min > br.ang_max:
            out.append(Violation("AngleBoundsInverted", ent))
        if not br.tap > 0:
            out.append(Violation("NonPositiveTap", ent))
        if br.s_max < 0:
            out.append(Violation("NegativeThermalLimit", ent))

    for k, gen in enumerate(net.generators):
        ent = f"generator {k} (bus {gen.bus})"
        if gen.bus not in seen:
            out.append(Violation("UnknownBusReference", ent))
        if gen.p_min > gen.p_max:
            out.append(Violation("ActiveBoundsInverted", ent))
        if gen.q_min > gen.q_max:
            out.append(Violation("ReactiveBoundsInverted", ent))
        if gen.c2 < 0:
            out.append(Violation("NegativeQuadraticCost", ent))
    return out


# ---------------------------------------------------------------------------
# serialisation


def _shortest(value: float, decode) -> str:
    """Shortest decimal string ``s`` with ``decode(float(s)) == value`` (best effort)."""
    guess = value
    for _ in range(2):
        for p in range(1, 18):
            s = f"{guess:.{p}g}"
            if decode(float(s)) == value:
                return s
        guess = float(repr(guess))
    # scan neighbouring doubles of the naive inverse
    cand = guess
    for direction in (math.inf, -math.inf):
        cand = guess
        for _ in range(8):
            cand = math.nextafter(cand, direction)
            if decode(cand) == value:
                return repr(cand)
    return repr(guess)


def _scaled(value: float, scale: float) -> str:
    return _shortest(value * scale, lambda v: v / scale) if scale != 1.0 else repr(value)


def _deg(value: float) -> str:
    return _shortest(math.degrees(value), math.radians)


def write_case(net: Network) -> str:
    """Serialise ``net`` back to MATPOWER text; ``parse_case`` inverts it exactly."""
    base = net.base_mva
    lines = [f"function mpc = {net.name or 'case'}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", ""]

    lines.append("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin")
    lines.append("mpc.bus = [")
    gen_buses = {g.bus for g in net.generators}
    for b in net.buses:
        kind = 3 if b.is_ref else (2 if b.id in gen_buses else 1)
        cols = [
            str(b.id), str(kind), _scaled(b.p_d, base), _scaled(b.q_d, base),
            _scaled(b.g_sh, base), _scaled(b.b_sh, base), "1", "1.0", "0.0", "1.0", "1",
            repr(b.v_max), repr(b.v_min),
        ]
        lines.append("\t" + "\t".join(cols) + ";")
    lines += ["];", ""]

    lines.append("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin")
    lines.append("mpc.gen = [")
    for g in net.generators:
        cols = [
            str(g.bus), "0.0", "0.0", _scaled(g.q_max, base), _scaled(g.q_min, base),
            "1.0", repr(base), "1", _scaled(g.p_max, base), _scaled(g.p_min, base),
        ]
        lines.append("\t" + "\t".join(cols) + ";")
    lines += ["];", ""]

    lines.append("%\t2\tstartup\tshutdown\tn\tc2\tc1\tc0")
    lines.append("mpc.gencost = [")
    for g in net.generators:
        c2 = _shortest(g.c2 / (base * base), lambda v: v * base * base)
        c1 = _shortest(g.c1 / base, lambda v: v * base)
        lines.append(f"\t2\t0.0\t0.0\t3\t{c2}\t{c1}\t{g.c0!r};")
    lines += ["];", ""]

    lines.append("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax")
    lines.append("mpc.branch = [")
    for br in net.branches:
        if br.r == 0.0 and br.x == 0.0:
            z = 1.0 / complex(br.g, br.b)
            r, x = z.real, z.imag
        else:
            r, x = br.r, br.x
        cols = [
            str(br.from_bus), str(br.to_bus), repr(r), repr(x), repr(br.b_c),
            _scaled(br.s_max, base), "0.0", "0.0", repr(br.tap), _deg(br.shift), "1",
            _deg(br.ang_min), _deg(br.ang_max),
        ]
        lines.append("\t" + "\t".join(cols) + ";")
    lines += ["];", ""]
    return "\n".join(lines)
