import numpy as np
import pytest

from mstatic.geometry import BistaticMeasurement, GnbNode, MeasurementSet, Scenario, bistatic_range, unit_from

CORNERS = [(0.3, 0.3, 2.5), (9.7, 0.3, 2.5), (9.7, 7.7, 2.5), (0.3, 7.7, 2.5), (5.0, 0.3, 2.5)]


def room(k=4, waypoints=((2.5, 3.0, 1.0), (7.5, 3.0, 1.0)), obstacles=()):
    gnbs = [GnbNode(i + 1, CORNERS[i]) for i in range(k)]
    return Scenario(gnbs, (0, 0, 0), (10, 8, 3), waypoints=waypoints, obstacles=obstacles)


def exact_set(scenario, target, offsets=None, kappa=200.0):
    """Noiseless round-robin measurements of a point target, optional per-link range offsets."""
    out = []
    pos = scenario.positions()
    pairs = [(k, j) for k in pos for j in pos if j != k]
    for i, (k, j) in enumerate(pairs):
        d = bistatic_range(pos[k], pos[j], target)
        if offsets is not None:
            d += offsets[i]
        out.append(BistaticMeasurement(k, j, d, unit_from(pos[j], target), kappa))
    return MeasurementSet(tuple(out))


@pytest.fixture
def scenario4():
    return room(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
