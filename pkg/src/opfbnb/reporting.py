"""Statistics over a branch-and-bound node trace and flat-file output.

Wall time is the only nondeterministic quantity in a run, so the JSON and CSV
files leave it out unless asked; everything else is byte-stable across reruns.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .branch_bound import BnBResult, Node, optimality_gap, var_name


class ReportError(Exception):
    pass


class NoChildren(ReportError):
    pass


class DegenerateRange(ReportError):
    pass


class IoFailure(ReportError):
    pass


SUMMARY_COLUMNS = ("case", "ac_obj", "qc_gap_pct", "bbqc_gap_pct", "time_s", "n_lev", "n_child")
LEVEL_COLUMNS = ("level", "floor", "roof", "upper_shadow", "lower_shadow", "mean_valid", "n_valid", "n_invalid")
CHILD_COLUMNS = ("id", "level", "parent", "var", "lo", "hi", "lb", "status")


@dataclass
class LevelStats:
    level: int
    floor: float | None
    roof: float | None
    upper_shadow: float | None
    lower_shadow: float | None
    mean_valid: float | None
    points: list[tuple[float | None, bool]] = field(default_factory=list)

    @property
    def n_valid(self) -> int:
        return sum(v for _, v in self.points)

    @property
    def n_invalid(self) -> int:
        return len(self.points) - self.n_valid


def _points(children: Iterable, valid: Callable | None) -> list[tuple[float | None, bool]]:
    out = []
    for c in children:
        if isinstance(c, Node):
            out.append((c.lb, bool(valid(c)) if valid else c.kept))
        else:
            obj, ok = c
            out.append((None if obj is None else float(obj), bool(ok)))
    return out


def level_stats(children: Sequence, valid: Callable | None = None, level: int = 0) -> LevelStats:
    """Candle statistics of one level.

    ``children`` are nodes (valid means kept, unless ``valid`` says otherwise)
    or ``(objective, valid)`` pairs.  Children without an objective, i.e.
    infeasible ones, count as invalid and do not enter the shadows.
    """
    pts = _points(children, valid)
    if not pts:
        raise NoChildren(f"level {level} has no children")
    objs = [o for o, _ in pts if o is not None]
    good = [o for o, ok in pts if ok and o is not None]
    return LevelStats(
        level=level,
        floor=min(good) if good else None,
        roof=max(good) if good else None,
        upper_shadow=max(objs) if objs else None,
        lower_shadow=min(objs) if objs else None,
        mean_valid=math.fsum(good) / len(good) if good else None,
        points=pts,
    )


def normalized_histogram(objectives: Iterable[float | None], ac_obj: float, qc_obj: float,
                         bins: int = 5) -> list[float]:
    """Percent of objectives per equal-width bin of ``obj / ac_obj`` on ``[qc_obj / ac_obj, 1]``.

    Values outside the range are clamped to the end bins; ``None`` entries are skipped.
    """
    if not ac_obj > 0:
        raise ValueError("ac_obj must be positive")
    if qc_obj > ac_obj:
        raise ValueError("qc_obj exceeds ac_obj")
    if ac_obj - qc_obj < 1e-12:
        raise DegenerateRange("QC and AC objectives coincide")
    lo = qc_obj / ac_obj
    width = (1.0 - lo) / bins
    counts = [0] * bins
    for obj in objectives:
        if obj is None:
            continue
        k = int(math.floor((obj / ac_obj - lo) / width))
        counts[min(max(k, 0), bins - 1)] += 1
    total = sum(counts)
    if total == 0:
        return [0.0] * bins
    return [100.0 * c / total for c in counts]


def validity_breakdown(children: Sequence, valid: Callable | None = None) -> tuple[float, float]:
    pts = _points(children, valid)
    if not pts:
        raise NoChildren("no children")
    share = 100.0 * sum(ok for _, ok in pts) / len(pts)
    return share, 100.0 - share


@dataclass
class RunReport:
    case: str
    ac_obj: float
    qc_obj: float
    final_lb: float
    qc_gap_pct: float
    bbqc_gap_pct: float
    time_s: float
    n_lev: int
    n_child: int
    levels: list[LevelStats]
    histogram: list[float]
    validity: tuple[float, float] | None
    children: list[Node]
    result: BnBResult | None = None

    def summary_row(self, timing: bool = True) -> dict:
        return {
            "case": self.case,
            "ac_obj": self.ac_obj,
            "qc_gap_pct": self.qc_gap_pct,
            "bbqc_gap_pct": self.bbqc_gap_pct,
            "time_s": self.time_s if timing else None,
            "n_lev": self.n_lev,
            "n_child": self.n_child,
        }


def gap_candle(report: RunReport) -> dict[str, float]:
    """Floor, roof and shadows of the gap candle in percent of the AC objective."""
    upper = report.qc_gap_pct
    floor = report.bbqc_gap_pct
    gaps = [100.0 * optimality_gap(report.ac_obj, c.lb) for c in report.children if c.kept]
    roof = max(gaps) if gaps else floor
    return {"floor": floor, "roof": max(roof, floor), "upper_shadow": upper, "lower_shadow": 0.0}


def build_report(result: BnBResult) -> RunReport:
    children = result.children()
    by_level: dict[int, list[Node]] = {}
    for c in children:
        by_level.setdefault(c.level, []).append(c)
    levels = [level_stats(by_level[k], level=k) for k in sorted(by_level)]
    try:
        hist = normalized_histogram([c.lb for c in children], result.ac_upper_bound, result.root_qc_lower_bound)
    except DegenerateRange:
        hist = [100.0] if children else [0.0]
    return RunReport(
        case=result.case,
        ac_obj=result.ac_upper_bound,
        qc_obj=result.root_qc_lower_bound,
        final_lb=result.final_lower_bound,
        qc_gap_pct=100.0 * result.qc_gap,
        bbqc_gap_pct=100.0 * result.final_gap,
        time_s=result.wall_time,
        n_lev=len(result.levels),
        n_child=result.total_children,
        levels=levels,
        histogram=hist,
        validity=validity_breakdown(children) if children else None,
        children=children,
        result=result,
    )


# ---------------------------------------------------------------------------
# output


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_num(v) for v in r])
    return buf.getvalue()


def _level_rows(report: RunReport):
    for s in report.levels:
        yield (s.level, s.floor, s.roof, s.upper_shadow, s.lower_shadow, s.mean_valid, s.n_valid, s.n_invalid)


def _child_rows(report: RunReport):
    for c in report.children:
        lo, hi = c.interval
        yield (c.id, c.level, c.parent_id, var_name(c.var), lo, hi, c.lb, c.status.value)


def to_json(report: RunReport, timing: bool = False) -> dict:
    res = report.result
    doc = {
        "case": report.case,
        "summary": report.summary_row(timing),
        "ac_objective": report.ac_obj,
        "qc_lower_bound": report.qc_obj,
        "final_lower_bound": report.final_lb,
        "histogram_pct": report.histogram,
        "validity_pct": None if report.validity is None else {"valid": report.validity[0],
                                                              "invalid": report.validity[1]},
        "gap_candle_pct": gap_candle(report),
        "levels": [dict(zip(LEVEL_COLUMNS, r)) for r in _level_rows(report)],
        "children": [dict(zip(CHILD_COLUMNS, r)) for r in _child_rows(report)],
    }
    if res is not None:
        doc["config"] = res.config
        doc["prune_epsilon"] = res.epsilon
        doc["best_node"] = res.best_node
        doc["variable_order"] = [var_name(v) for v in res.order]
        doc["level_bounds"] = [
            {"level": r.level, "var": var_name(r.var), "lower_bound": r.lower_bound, "gap_pct": 100.0 * r.gap,
             "children": r.n_children, "kept": r.n_kept, "infeasible": r.n_infeasible,
             "upper_bound_pruned": r.n_upper_bound, "below_root_pruned": r.n_below_root, "unsplit": r.n_unsplit}
            for r in res.levels
        ]
        if res.ac_point is not None:
            doc["ac_point"] = res.ac_point.to_dict()
    return doc


def render(report: RunReport, fmt: str = "both", timing: bool = False) -> dict[str, str]:
    """File name to file text for ``fmt`` in ``json``, ``csv`` or ``both``."""
    if fmt not in ("json", "csv", "both"):
        raise ValueError(f"unknown format {fmt!r}")
    files: dict[str, str] = {}
    if fmt in ("json", "both"):
        files["report.json"] = json.dumps(to_json(report, timing), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if fmt in ("csv", "both"):
        row = report.summary_row(timing)
        files["summary.csv"] = _csv(SUMMARY_COLUMNS, [[row[k] for k in SUMMARY_COLUMNS]])
        files["levels.csv"] = _csv(LEVEL_COLUMNS, _level_rows(report))
        files["children.csv"] = _csv(CHILD_COLUMNS, _child_rows(report))
    return files


def emit(report: RunReport, fmt: str, path: str | Path, timing: bool = False) -> list[Path]:
    """Write the report files into directory ``path``; returns the paths written."""
    out = Path(path)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in render(report, fmt, timing).items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            written.append(p)
    except OSError as e:
        raise IoFailure(str(e)) from e
    return written


__all__ = [
    "CHILD_COLUMNS",
    "DegenerateRange",
    "IoFailure",
    "LEVEL_COLUMNS",
    "LevelStats",
    "NoChildren",
    "RunReport",
    "SUMMARY_COLUMNS",
    "build_report",
    "emit",
    "gap_candle",
    "level_stats",
    "normalized_histogram",
    "render",
    "to_json",
    "validity_breakdown",
]
