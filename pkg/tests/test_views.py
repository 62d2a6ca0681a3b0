import dataclasses

import numpy as np
import pytest

from scenemotion.scenario import MapPolyline, compose_rigid, rigid_transform
from scenemotion.views import (
    KIND_LIGHT,
    KIND_MAP,
    KIND_MOTION,
    AgentCentricView,
    LayoutError,
    ViewConfig,
    ViewLayout,
    batch_views,
    build_view,
    split_polyline,
    unbatch,
)


def test_under_capacity_keeps_everything(two_agent_scene):
    short = tuple(MapPolyline(f"m{j}", "lane", np.array([[10.0 * j, 5.0], [10.0 * j + 5.0, 5.0]])) for j in range(3))
    two_agent_scene = dataclasses.replace(two_agent_scene, map=short)
    v = build_view(two_agent_scene, "a")
    assert (v.kinds == KIND_MAP).sum() == 3
    assert (v.kinds == KIND_MOTION).sum() == 3  # focal + 2 context agents
    assert (v.kinds == KIND_LIGHT).sum() == 1
    feats, mask, _, _ = batch_views([v, build_view(two_agent_scene, "b", ViewConfig(n_map=1))])
    assert mask[0].all() and mask[1].sum() == len(v) - 2  # two map tokens dropped


def test_focal_anchored_at_origin(two_agent_scene):
    s = two_agent_scene
    layout = ViewLayout(s.n_past, 10)
    for fid in ("a", "b"):
        v = build_view(s, fid)
        assert v.token_ids[0] == fid and v.kinds[0] == KIND_MOTION
        o = layout.step_offset(s.current_index)
        np.testing.assert_allclose(v.features[0, o : o + 4], (0.0, 0.0, 1.0, 0.0), atol=1e-12)
        # temporal one-hot and validity flag of the t=0 slot
        assert v.features[0, o + 8 + s.current_index] == 1.0
        assert v.features[0, o + layout.step_width - 1] == 1.0


def test_focal_velocity_is_forward(two_agent_scene):
    layout = ViewLayout(11, 10)
    v = build_view(two_agent_scene, "b")  # moves along +y at 5 m/s
    o = layout.step_offset(10)
    np.testing.assert_allclose(v.features[0, o + 4 : o + 6], (5.0, 0.0), atol=1e-12)


def test_map_selection_matches_brute_force(two_agent_scene):
    rng = np.random.default_rng(0)
    polys = []
    for j in range(200):
        c = rng.uniform(-300, 300, 2)
        n = int(rng.integers(1, 8))
        polys.append(MapPolyline(f"p{j:03d}", "lane", c + rng.normal(0, 3, (n, 2))))
    s = dataclasses.replace(two_agent_scene, map=tuple(polys))
    origin = s.agent("a").states[s.current_index, :2]
    dist = {p.polyline_id: np.min(np.linalg.norm(p.nodes - origin, axis=1)) for p in polys}
    expected = sorted(dist, key=lambda k: (dist[k], k))[:128]
    v = build_view(s, "a")
    got = [tid for tid, k in zip(v.token_ids, v.kinds) if k == KIND_MAP]
    assert got == expected


def test_capacity_limits(synthetic_scenes):
    cfg = ViewConfig(n_map=5, n_agents=2, n_traffic_lights=1)
    for s in synthetic_scenes:
        for fid in s.focal_ids:
            v = build_view(s, fid, cfg)
            assert (v.kinds == KIND_MAP).sum() <= 5
            assert (v.kinds == KIND_MOTION).sum() <= 3
            assert (v.kinds == KIND_LIGHT).sum() <= 1


def test_context_agents_exclude_invalid_at_t0(two_agent_scene):
    c = two_agent_scene.agent("c")
    states = c.states.copy()
    states[10] = 0.0
    s = dataclasses.replace(two_agent_scene, agents=two_agent_scene.agents[:2] + (dataclasses.replace(c, states=states),))
    v = build_view(s, "a")
    assert "c" not in v.token_ids


def test_lookup_errors(two_agent_scene):
    with pytest.raises(LookupError):
        build_view(two_agent_scene, "nobody")
    c = two_agent_scene.agent("c")
    states = c.states.copy()
    states[10] = 0.0
    s = dataclasses.replace(two_agent_scene, agents=two_agent_scene.agents[:2] + (dataclasses.replace(c, states=states),))
    with pytest.raises(LookupError):
        build_view(s, "c")


def test_rigid_invariance_of_features(synthetic_scenes):
    rng = np.random.default_rng(1)
    for s in synthetic_scenes:
        th, t = float(rng.uniform(-np.pi, np.pi)), rng.uniform(-500, 500, 2)
        moved = rigid_transform(s, th, t)
        for fid in s.focal_ids:
            v0, v1 = build_view(s, fid), build_view(moved, fid)
            assert v0.token_ids == v1.token_ids
            np.testing.assert_allclose(v1.features, v0.features, rtol=0, atol=1e-9)
            # the pose changes by the applied transform
            exp_th, exp_t = compose_rigid(th, t, v0.pose[0], v0.pose[1:])
            assert np.cos(v1.pose[0] - exp_th) == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(v1.pose[1:], exp_t, atol=1e-9)


def test_input_order_does_not_matter(synthetic_scenes):
    rng = np.random.default_rng(2)
    for s in synthetic_scenes[:3]:
        shuffled = dataclasses.replace(
            s, agents=tuple(s.agents[i] for i in rng.permutation(len(s.agents))),
            map=tuple(s.map[i] for i in rng.permutation(len(s.map))),
        )
        for fid in s.focal_ids:
            a, b = build_view(s, fid), build_view(shuffled, fid)
            assert a.token_ids == b.token_ids
            np.testing.assert_array_equal(a.features, b.features)


def test_no_absolute_coordinates(two_agent_scene):
    far = rigid_transform(two_agent_scene, 0.0, (1e5, -1e5))
    v = build_view(far, "a")
    assert np.abs(v.features).max() < 100.0


def _view(n, width=7, fill=1.0):
    return AgentCentricView("x", (0.0, 0.0, 0.0), np.full((n, width), fill), np.zeros(n, dtype=np.int64), ("t",) * n)


def test_batch_padding_arithmetic():
    feats, mask, kinds, poses = batch_views([_view(5), _view(9, fill=2.0)])
    assert feats.shape == (2, 9, 7)
    assert mask[0].sum() == 5 and (~mask[0]).sum() == 4 and mask[1].all()
    assert np.all(feats[0, 5:] == 0) and np.all(kinds[0, 5:] == -1)
    assert poses.shape == (2, 3)
    feats, mask, _, _ = batch_views([_view(3)])
    assert mask.all()


def test_batch_roundtrip(synthetic_scenes):
    views = [build_view(s, fid) for s in synthetic_scenes[:3] for fid in s.focal_ids]
    for (f, k), v in zip(unbatch(*batch_views(views)[:3]), views):
        np.testing.assert_array_equal(f, v.features)
        np.testing.assert_array_equal(k, v.kinds)


def test_batch_errors():
    with pytest.raises(ValueError):
        batch_views([])
    with pytest.raises(LayoutError):
        batch_views([_view(2, width=7), _view(2, width=8)])


def test_split_polyline_shares_endpoints():
    nodes = np.column_stack([np.arange(25.0), np.zeros(25)])
    parts = split_polyline(nodes, 10)
    assert all(len(p) <= 10 for p in parts)
    for a, b in zip(parts, parts[1:]):
        np.testing.assert_array_equal(a[-1], b[0])
    np.testing.assert_array_equal(np.unique(np.concatenate(parts), axis=0), nodes)


def test_padding_slots_zero_for_partial_history(two_agent_scene):
    a = two_agent_scene.agent("b")
    states = a.states.copy()
    states[:4] = 0.0
    s = dataclasses.replace(two_agent_scene, agents=(two_agent_scene.agents[0], dataclasses.replace(a, states=states),
                                                     two_agent_scene.agents[2]))
    v = build_view(s, "b")
    layout = ViewLayout(11, 10)
    for k in range(4):
        o = layout.step_offset(k)
        assert np.all(v.features[0, o : o + layout.step_width] == 0.0)

