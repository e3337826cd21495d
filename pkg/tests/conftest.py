import warnings

import numpy as np
import pytest

from opfbnb import fixture_path
from opfbnb.ac_opf import local_solve
from opfbnb.case_model import load_case

warnings.filterwarnings("ignore", category=DeprecationWarning)

FIXTURES = ("case2_fixture", "case3_lmbd", "case14_ieee")


@pytest.fixture(scope="session")
def nets():
    names = FIXTURES + ("case3_lmbd__sad", "case24_ieee_rts__sad")
    return {n: load_case(fixture_path(n)) for n in names}


@pytest.fixture(scope="session")
def ac_solutions(nets):
    """Local AC optimum per shipped fixture, computed once."""
    return {n: local_solve(nets[n]) for n in FIXTURES + ("case3_lmbd__sad",)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def bnb_runs(nets):
    """Default-order six-level runs on case3_lmbd and case14_ieee, computed once."""
    from opfbnb.branch_bound import BnBConfig, run

    return {n: run(nets[n], BnBConfig(levels=6)) for n in ("case3_lmbd", "case14_ieee")}


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance line; all lines are printed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(n, ok, detail):
        lines.append((n, f"ACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
