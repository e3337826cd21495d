"""Global optimisation of AC optimal power flow via QC relaxation and branch-and-bound."""

from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"


def fixture_path(name: str) -> Path:
    """Path of a case file shipped with the package (``case3_lmbd`` or a file name)."""
    for cand in (name, f"{name}.m", f"pglib_opf_{name}.m"):
        p = DATA_DIR / cand
        if p.exists():
            return p
    raise FileNotFoundError(name)


__all__ = ["DATA_DIR", "fixture_path"]
