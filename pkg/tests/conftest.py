import numpy as np
import pytest

from turbine_nbm import get_backend, set_backend
from turbine_nbm._backend import HAVE_NUMBA

ACCEPTANCE_LINES = []

BACKENDS = ["numba", "numpy"] if HAVE_NUMBA else ["numpy"]


def record_criterion(number, title, passed, detail=""):
    """Print one verdict line now (visible with -s) and again in the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(params=BACKENDS)
def backend(request):
    old = set_backend(request.param)
    yield request.param
    set_backend(old)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _restore_backend():
    old = get_backend()
    yield
    set_backend(old)
