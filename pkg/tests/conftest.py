import numpy as np
import pytest

from rpspde.convolution import Modulation
from rpspde.nonlinearity import SineNonlinearity
from rpspde.spectral import build_interval_operator


@pytest.fixture(scope="session")
def op():
    return build_interval_operator(1.0, 8, 32)


@pytest.fixture(scope="session")
def small_op():
    return build_interval_operator(1.0, 4, 16)


@pytest.fixture(scope="session")
def mod():
    return Modulation.power_law(8, 0.2, 2.0, 1.0, 0.5)


@pytest.fixture(scope="session")
def sine_F():
    return SineNonlinearity(0.1, 0.05, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
