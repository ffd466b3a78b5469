import sys
import warnings
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from phdim.maps import BelykhMap, BelykhParams, ParameterRangeWarning, RemarkMap  # noqa: E402

settings.register_profile(
    "repo", deadline=None, derandomize=True, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")

GOLDEN = Path(__file__).parent / "golden"


def _quiet(factory):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterRangeWarning)
        return factory()


@pytest.fixture(scope="session")
def fig():
    return _quiet(lambda: BelykhMap(BelykhParams.standard()))


@pytest.fixture(scope="session")
def lam05():
    return _quiet(lambda: BelykhMap(BelykhParams.standard(lam=0.5)))


@pytest.fixture(scope="session")
def degenerate():
    return _quiet(lambda: BelykhMap(BelykhParams.degenerate()))


@pytest.fixture(scope="session")
def remark():
    return RemarkMap()


# -- acceptance summary ----------------------------------------------------------------

ACCEPTANCE = {}


def record_acceptance(number, name, passed, detail=""):
    ACCEPTANCE[number] = (name, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:2d} {name}: {detail}")
