import numpy as np
import pytest

from langevin_ud.field import StationaryModel
from langevin_ud.raster import GridGeometry, RasterGrid

_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def flat_model():
    return StationaryModel((), np.zeros(0))


@pytest.fixture(scope="session")
def random_raster():
    r = np.random.default_rng(7)
    return RasterGrid(-1.0, -1.5, 0.25, 0.3, r.normal(size=(11, 9)))


@pytest.fixture(scope="session")
def smooth_raster():
    geom = GridGeometry.from_bounds(-3, 3, -3, 3, 61, 61)
    return RasterGrid.from_function(geom, lambda p: np.sin(1.3 * p[:, 0]) * np.cos(0.7 * p[:, 1]) + 0.2 * p[:, 0])
