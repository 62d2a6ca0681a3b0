import numpy as np
import pytest

from scenemotion.scenario import AgentTrack, MapPolyline, TrafficLightRecord, TrafficScenario
from scenemotion.synthetic import GeneratorConfig, generate_synthetic


def straight_track(agent_id, start, velocity, n_steps=91, cls="vehicle", heading=None, length=4.6, width=1.9):
    """Constant-velocity track starting at ``start`` (all steps valid)."""
    t = np.arange(n_steps) * 0.1 - 1.0
    vel = np.asarray(velocity, float)
    pos = np.asarray(start, float) + t[:, None] * vel
    h = np.arctan2(vel[1], vel[0]) if heading is None else heading
    states = np.column_stack([pos, np.full(n_steps, h), np.tile(vel, (n_steps, 1)), np.ones(n_steps)])
    return AgentTrack(agent_id, cls, states, length, width)


@pytest.fixture
def two_agent_scene():
    agents = (
        straight_track("a", (0.0, 0.0), (5.0, 0.0)),
        straight_track("b", (10.0, -10.0), (0.0, 5.0)),
        straight_track("c", (-20.0, 3.0), (0.0, 0.0), heading=0.3),
    )
    lane = MapPolyline("lane0", "lane", np.column_stack([np.linspace(-50, 50, 25), np.zeros(25)]))
    cw = MapPolyline("cw0", "crosswalk", np.array([[10.0, -5.0], [10.0, 5.0]]))
    light = TrafficLightRecord("lane0", (5.0, 0.0), tuple(["go"] * 11))
    return TrafficScenario("toy-0", agents, (lane, cw), (light,), ("a", "b"))


@pytest.fixture(scope="session")
def synthetic_scenes():
    return generate_synthetic(0, 6)


@pytest.fixture(scope="session")
def small_scenes():
    """Scenes with few agents for quick model tests."""
    return generate_synthetic(3, 3, GeneratorConfig(n_agents_min=3, n_agents_max=4, n_focal=3))


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
