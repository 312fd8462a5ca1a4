from __future__ import annotations

import time

import pytest

from vortexpatch.solver import ContinuationConfig, make_problem, newton_solve

ACCEPTANCE_LINES: list[str] = []
# wall time of the session solves, used by the acceptance runtime checks
TIMINGS: dict[str, float] = {}


@pytest.fixture(scope="session")
def two_layer():
    return make_problem("two_layer", 2, b=0.3)


@pytest.fixture(scope="session")
def three_layer():
    return make_problem("three_layer", 2, b2=0.5, theta2=-5.0)


@pytest.fixture(scope="session")
def three_point(three_layer):
    return three_layer.bifurcation()


@pytest.fixture(scope="session")
def three_state(three_layer, three_point):
    """Newton solution on the three-layer branch at s = 1e-3."""
    t0 = time.perf_counter()
    state = newton_solve(three_layer, three_point, 1e-3, ContinuationConfig())
    TIMINGS["three_state"] = time.perf_counter() - t0
    return state


@pytest.fixture(scope="session")
def two_states(two_layer):
    out = {}
    t0 = time.perf_counter()
    for root in ("+", "-"):
        point = two_layer.bifurcation(root=root)
        out[root] = (point, newton_solve(two_layer, point, 1e-3, ContinuationConfig()))
    TIMINGS["two_states"] = time.perf_counter() - t0
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
