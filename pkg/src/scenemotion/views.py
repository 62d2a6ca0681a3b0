"""Local agent-centric input views.

Each view is a set of polyline tokens expressed in the focal agent's frame at
t=0. Every token has the same width::

    [kind one-hot (3) | payload (P)]

with P = max(motion, map, traffic-light payload) and zero padding. Payloads:

* motion: n_past steps x (x, y, cos h, sin h, vx, vy, length, width,
  one-hot step (n_past), one-hot class (3), valid)
* map: max_segment_nodes nodes x (x, y, one-hot kind (5), valid)
* traffic light: (x, y, one-hot state (4), valid) at the stop point, state at t=0

:class:`ViewLayout` exposes the exact slot offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import AGENT_CLASSES, LIGHT_STATES, MAP_KINDS, TrafficScenario, rotation

KIND_MOTION, KIND_MAP, KIND_LIGHT = 0, 1, 2
KIND_NAMES = ("motion", "map", "traffic_light")


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ViewConfig:
    n_map: int = 128
    n_agents: int = 48
    n_traffic_lights: int = 16
    max_segment_nodes: int = 10


@dataclass(frozen=True)
class ViewLayout:
    n_past: int = 11
    max_segment_nodes: int = 10

    @property
    def step_width(self) -> int:
        return 8 + self.n_past + len(AGENT_CLASSES) + 1

    @property
    def node_width(self) -> int:
        return 2 + len(MAP_KINDS) + 1

    @property
    def light_width(self) -> int:
        return 2 + len(LIGHT_STATES) + 1

    @property
    def payload_width(self) -> int:
        return max(self.n_past * self.step_width, self.max_segment_nodes * self.node_width, self.light_width)

    @property
    def width(self) -> int:
        return len(KIND_NAMES) + self.payload_width

    def step_offset(self, step: int) -> int:
        return len(KIND_NAMES) + step * self.step_width

    def node_offset(self, node: int) -> int:
        return len(KIND_NAMES) + node * self.node_width


@dataclass(frozen=True, eq=False)
class AgentCentricView:
    """Tokens of one focal agent's view; ``pose`` = (theta, tx, ty) maps local to global."""

    focal_id: str
    pose: tuple[float, float, float]
    features: np.ndarray  # (L, width)
    kinds: np.ndarray  # (L,) int
    token_ids: tuple[str, ...]

    def __len__(self):
        return len(self.kinds)


def split_polyline(nodes: np.ndarray, max_nodes: int) -> list[np.ndarray]:
    """Consecutive segments of at most ``max_nodes`` nodes sharing end points."""
    if len(nodes) <= max_nodes:
        return [nodes]
    step = max_nodes - 1
    return [nodes[i : i + max_nodes] for i in range(0, len(nodes) - 1, step)]


def _to_local(xy, origin, R_inv):
    return (np.asarray(xy, float) - origin) @ R_inv.T


def _rank(dists, ids):
    """Indices sorted by (distance, id). Distances are rounded to 1e-6 m so ties stay exact under rigid motion."""
    keys = sorted(range(len(ids)), key=lambda i: (round(float(dists[i]), 6), ids[i]))
    return keys


def build_view(scenario: TrafficScenario, focal_id: str, cfg: ViewConfig | None = None) -> AgentCentricView:
    cfg = cfg or ViewConfig()
    layout = ViewLayout(scenario.n_past, cfg.max_segment_nodes)
    cur = scenario.current_index
    try:
        focal = scenario.agent(focal_id)
    except KeyError:
        raise LookupError(f"{scenario.scenario_id}: no agent {focal_id!r}") from None
    if not focal.valid[cur]:
        raise LookupError(f"{scenario.scenario_id}: agent {focal_id!r} is not valid at t=0")

    origin = focal.states[cur, :2].copy()
    theta = float(focal.states[cur, 2])
    R_inv = rotation(-theta)

    rows, kinds, ids = [], [], []

    # motion polylines: focal first, then nearest valid context agents
    context = [a for a in scenario.agents if a.agent_id != focal_id and a.valid[cur]]
    d_agents = [float(np.linalg.norm(a.states[cur, :2] - origin)) for a in context]
    chosen = [context[i] for i in _rank(d_agents, [a.agent_id for a in context])[: cfg.n_agents]]
    for agent in [focal] + chosen:
        vec = np.zeros(layout.width)
        vec[KIND_MOTION] = 1.0
        st = agent.states[: scenario.n_past]
        valid = st[:, 5] > 0.5
        pos = _to_local(st[:, :2], origin, R_inv)
        vel = st[:, 3:5] @ R_inv.T
        rel_h = st[:, 2] - theta
        cls = AGENT_CLASSES.index(agent.agent_class)
        for k in np.flatnonzero(valid):
            o = layout.step_offset(k)
            vec[o : o + 8] = (pos[k, 0], pos[k, 1], np.cos(rel_h[k]), np.sin(rel_h[k]),
                              vel[k, 0], vel[k, 1], agent.length, agent.width)
            vec[o + 8 + k] = 1.0
            vec[o + 8 + layout.n_past + cls] = 1.0
            vec[o + layout.step_width - 1] = 1.0
        rows.append(vec)
        kinds.append(KIND_MOTION)
        ids.append(agent.agent_id)

    # map segments
    segments = []
    for p in scenario.map:
        parts = split_polyline(p.nodes, cfg.max_segment_nodes)
        for j, nodes in enumerate(parts):
            sid = p.polyline_id if len(parts) == 1 else f"{p.polyline_id}#{j}"
            segments.append((sid, p.kind, nodes))
    d_map = [float(np.min(np.linalg.norm(nodes - origin, axis=1))) for _, _, nodes in segments]
    for i in _rank(d_map, [s[0] for s in segments])[: cfg.n_map]:
        sid, kind, nodes = segments[i]
        vec = np.zeros(layout.width)
        vec[KIND_MAP] = 1.0
        local = _to_local(nodes, origin, R_inv)
        k_idx = MAP_KINDS.index(kind)
        for n in range(len(nodes)):
            o = layout.node_offset(n)
            vec[o : o + 2] = local[n]
            vec[o + 2 + k_idx] = 1.0
            vec[o + layout.node_width - 1] = 1.0
        rows.append(vec)
        kinds.append(KIND_MAP)
        ids.append(sid)

    # traffic lights
    lights = scenario.traffic_lights
    d_tl = [float(np.linalg.norm(np.asarray(tl.stop_point) - origin)) for tl in lights]
    for i in _rank(d_tl, [tl.lane_ref for tl in lights])[: cfg.n_traffic_lights]:
        tl = lights[i]
        vec = np.zeros(layout.width)
        vec[KIND_LIGHT] = 1.0
        o = len(KIND_NAMES)
        vec[o : o + 2] = _to_local(tl.stop_point, origin, R_inv)
        vec[o + 2 + LIGHT_STATES.index(tl.states[cur])] = 1.0
        vec[o + layout.light_width - 1] = 1.0
        rows.append(vec)
        kinds.append(KIND_LIGHT)
        ids.append(tl.lane_ref)

    features = np.array(rows)
    features.setflags(write=False)
    return AgentCentricView(focal_id, (theta, float(origin[0]), float(origin[1])), features,
                            np.array(kinds, dtype=np.int64), tuple(ids))


def batch_views(views):
    """Pad views to a common token count.

    Returns (features (B, L, W), mask (B, L) bool, kinds (B, L) with -1 on
    padding, poses (B, 3)).
    """
    views = list(views)
    if not views:
        raise ValueError("batch_views needs at least one view")
    widths = {v.features.shape[1] for v in views if len(v)} or {views[0].features.shape[-1]}
    if len(widths) != 1:
        raise LayoutError(f"mixed feature widths {sorted(widths)}")
    width = widths.pop()
    L = max(len(v) for v in views)
    feats = np.zeros((len(views), L, width))
    mask = np.zeros((len(views), L), dtype=bool)
    kinds = np.full((len(views), L), -1, dtype=np.int64)
    for b, v in enumerate(views):
        n = len(v)
        feats[b, :n] = v.features
        mask[b, :n] = True
        kinds[b, :n] = v.kinds
    poses = np.array([v.pose for v in views], dtype=float)
    return feats, mask, kinds, poses


def unbatch(features, mask, kinds):
    """Inverse of :func:`batch_views` for features and kinds."""
    return [(features[b][mask[b]], kinds[b][mask[b]]) for b in range(len(features))]
