import numpy as np
import pytest

from cellsynth import scenarios
from cellsynth.geometry import ConvexCell, Environment
from cellsynth.planner import plan_from_environment
from cellsynth.synthesis import synthesize_plan

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


@pytest.fixture
def square():
    return ConvexCell(0, UNIT_SQUARE)


@pytest.fixture
def two_squares():
    V = np.array([[0, 0], [1, 0], [2, 0], [0, 1], [1, 1], [2, 1]], dtype=float)
    return Environment.from_ids(V, [[0, 1, 4, 3], [1, 2, 5, 4]])


def _synth(sc):
    plan, env, graph = plan_from_environment(sc.env)
    res = synthesize_plan(env, sc.system, plan, sc.c_b, sc.c_V)
    return sc, plan, env, res


@pytest.fixture(scope="session")
def floor_synth():
    return _synth(scenarios.floor_scenario())


@pytest.fixture(scope="session")
def ring_synth():
    return _synth(scenarios.ring_scenario())


@pytest.fixture(scope="session")
def l_synth():
    return _synth(scenarios.l_shape_scenario())
