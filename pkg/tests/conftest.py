from pathlib import Path

import pytest

from msr2io import bundled_model
from msr2io.frontend import load
from msr2io.terms import App, Symbol, Theory

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


def fixture_model(name: str):
    return load((FIXTURES / name).read_text())


def small_theory() -> Theory:
    """h/1, pair/2, g/0 and a commutative exp/2: small enough to brute-force."""
    th = Theory()
    for s in (Symbol("h", 1), Symbol("pair", 2), Symbol("g", 0), Symbol("exp", 2, "crypto")):
        th.add_symbol(s)
    th.declare_commutative("exp")
    return th


G = App("g")


@pytest.fixture(scope="session")
def dh():
    return bundled_model("dh")


@pytest.fixture(scope="session")
def dh_split(dh):
    from msr2io.transform import build_interface, split_io

    return split_io(build_interface(dh))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, f"rep_{rep.when}", rep)
