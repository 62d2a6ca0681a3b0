import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from scenemotion.scenario import (
    ScenarioParseError,
    ScenarioValidationError,
    compose_rigid,
    future_ground_truth,
    load_scenarios,
    normalize_angle,
    rigid_transform,
    save_scenarios,
    scenario_to_dict,
    validate,
)


def test_roundtrip_single(tmp_path, two_agent_scene):
    path = tmp_path / "one.jsonl"
    save_scenarios(path, [two_agent_scene])
    loaded = load_scenarios(path)
    assert len(loaded) == 1
    assert loaded[0] == two_agent_scene


def test_roundtrip_28_generated(tmp_path):
    from scenemotion.synthetic import generate_synthetic

    scenes = generate_synthetic(11, 28)
    path = tmp_path / "many.jsonl"
    save_scenarios(path, scenes)
    loaded = load_scenarios(path)
    assert [s.scenario_id for s in loaded] == [s.scenario_id for s in scenes]
    for a, b in zip(scenes, loaded):
        assert scenario_to_dict(a) == scenario_to_dict(b)
        for ta, tb in zip(a.agents, b.agents):
            np.testing.assert_array_equal(ta.states, tb.states)


def test_invalid_focal_rejected(tmp_path, two_agent_scene):
    d = scenario_to_dict(two_agent_scene)
    d["agents"][0]["states"][10]["valid"] = False
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(d) + "\n")
    with pytest.raises(ScenarioValidationError) as err:
        load_scenarios(path)
    assert err.value.scenario_id == "toy-0"
    assert err.value.field == "focal_ids"


def test_parse_error_names_line(tmp_path, two_agent_scene):
    good = json.dumps(scenario_to_dict(two_agent_scene))
    path = tmp_path / "broken.jsonl"
    path.write_text(good + "\n{not json\n")
    with pytest.raises(ScenarioParseError) as err:
        load_scenarios(path)
    assert err.value.line_no == 2


def test_unknown_key_is_parse_error(tmp_path, two_agent_scene):
    d = scenario_to_dict(two_agent_scene)
    d["surprise"] = 1
    path = tmp_path / "extra.jsonl"
    path.write_text(json.dumps(d) + "\n")
    with pytest.raises(ScenarioParseError):
        load_scenarios(path)


def test_validation_rules(two_agent_scene):
    s = two_agent_scene
    with pytest.raises(ScenarioValidationError):
        validate(dataclasses.replace(s, focal_ids=("a", "zz")))
    with pytest.raises(ScenarioValidationError):
        validate(dataclasses.replace(s, n_future=40))
    with pytest.raises(ScenarioValidationError):
        validate(dataclasses.replace(s, dt=0.0))
    validate(s)


def test_identity_transform(two_agent_scene):
    assert rigid_transform(two_agent_scene, 0.0, (0.0, 0.0)) == two_agent_scene


def test_quarter_turn_moves_x_to_y(two_agent_scene):
    out = rigid_transform(two_agent_scene, math.pi / 2, (0.0, 0.0))
    # agent "a" is at (5, 0) at t = +1 s (step 20)
    np.testing.assert_allclose(out.agent("a").states[20, :2], (0.0, 5.0), atol=1e-12)
    np.testing.assert_allclose(out.agent("a").states[20, 3:5], (0.0, 5.0), atol=1e-12)
    assert out.agent("a").states[20, 2] == pytest.approx(math.pi / 2)


def test_rejects_non_finite(two_agent_scene):
    with pytest.raises(ValueError):
        rigid_transform(two_agent_scene, float("nan"), (0.0, 0.0))
    with pytest.raises(ValueError):
        rigid_transform(two_agent_scene, 0.0, (np.inf, 0.0))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50),
    st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50),
)
def test_composition(two_agent_scene, th1, x1, y1, th2, x2, y2):
    two_step = rigid_transform(rigid_transform(two_agent_scene, th1, (x1, y1)), th2, (x2, y2))
    th, t = compose_rigid(th2, (x2, y2), th1, (x1, y1))
    one_step = rigid_transform(two_agent_scene, th, t)
    for a, b in zip(two_step.agents, one_step.agents):
        np.testing.assert_allclose(a.states[:, [0, 1, 3, 4]], b.states[:, [0, 1, 3, 4]], atol=1e-12)
        dh = normalize_angle(a.states[:, 2] - b.states[:, 2])
        assert np.max(np.abs(dh)) < 1e-12


def test_pairwise_distances_preserved(synthetic_scenes):
    rng = np.random.default_rng(5)
    for s in synthetic_scenes:
        out = rigid_transform(s, rng.uniform(-np.pi, np.pi), rng.uniform(-100, 100, 2))
        pos = np.stack([a.positions for a in s.agents])
        pos2 = np.stack([a.positions for a in out.agents])
        valid = np.stack([a.valid for a in s.agents])
        for t in range(s.n_steps):
            p, q, v = pos[:, t], pos2[:, t], valid[:, t]
            d1 = np.linalg.norm(p[v][:, None] - p[v][None], axis=-1)
            d2 = np.linalg.norm(q[v][:, None] - q[v][None], axis=-1)
            np.testing.assert_allclose(d1, d2, atol=1e-9)


def test_invalid_slots_stay_zero(synthetic_scenes):
    for s in synthetic_scenes:
        out = rigid_transform(s, 1.0, (3.0, -4.0))
        for a in out.agents:
            assert np.all(a.states[~a.valid] == 0.0)


def test_heading_normalisation():
    assert normalize_angle(math.pi) == pytest.approx(math.pi)
    assert normalize_angle(-math.pi) == pytest.approx(math.pi)
    assert normalize_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_future_ground_truth(two_agent_scene):
    pos, valid = future_ground_truth(two_agent_scene, horizon=30)
    assert pos.shape == (2, 30, 2) and valid.all()
    np.testing.assert_allclose(pos[0, 9], (5.0, 0.0))
