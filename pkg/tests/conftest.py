import math

import numpy as np
import pytest

from itu_match.equilibrium import Market
from itu_match.model import Preferences, TransferableUtility, TypeSpec, make_pair

FIXTURES = __import__("pathlib").Path(__file__).resolve().parent.parent / "fixtures"


def table_prefs(**kw):
    kw.setdefault("delta_a", {"const": 0.5, "same_edu": 0.3})
    kw.setdefault("delta_b", {"const": 0.2, "same_edu": 0.4})
    return Preferences.from_shares([(0.314, 0.616), (0.372, 0.571)], [(0.251, 0.634), (0.336, 0.566)], 0.433, **kw)


def tu_market(phi, n=1.0, m=1.0):
    return Market([TypeSpec("m0", n)], [TypeSpec("w0", m)], family="tu", prefs=TransferableUtility([[phi]]))


def hp_market(prefs, men, women):
    return Market(
        [TypeSpec(f"m{i}", 1.0, w, e) for i, (w, e) in enumerate(men)],
        [TypeSpec(f"w{i}", 1.0, w, e) for i, (w, e) in enumerate(women)],
        family="home_production", prefs=prefs,
    )


@pytest.fixture
def prefs():
    return table_prefs()


@pytest.fixture
def pair(prefs):
    return make_pair(prefs, TypeSpec("m", wage=20.0, education=0), TypeSpec("w", wage=15.0, education=1))


@pytest.fixture
def market3(prefs):
    return hp_market(prefs, [(14.0, 0), (20.0, 0), (28.0, 1)], [(10.5, 0), (15.0, 1), (21.0, 1)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def close(a, b, tol):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
