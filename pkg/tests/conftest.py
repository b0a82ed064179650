import numpy as np
import pytest

from vemstab.geometry import build_polygon, element_sequence

SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
HEXAGON = [(np.cos(k * np.pi / 3), np.sin(k * np.pi / 3)) for k in range(6)]


@pytest.fixture
def square():
    return build_polygon(SQUARE)


@pytest.fixture
def hexagon():
    return build_polygon(HEXAGON)


@pytest.fixture
def pentagon():
    """First element of the flattening family."""
    return element_sequence("flatten", 1)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = {}


def record_criterion(n, ok, detail):
    """Print and remember one acceptance verdict line."""
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    _CRITERIA[n] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
