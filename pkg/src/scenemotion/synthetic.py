"""Seeded synthetic traffic scenes on three template maps.

Every scene contains one yielding/priority agent pair whose constant-velocity
extrapolations from t=0 meet at a conflict point; the recorded futures
resolve the conflict (the yielding agent brakes, waits, then proceeds).
Background agents are placed by rejection sampling so that no two agents
ever come closer than ``MIN_SEPARATION`` (recorded futures are collision free).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import (
    AgentTrack,
    MapPolyline,
    TrafficLightRecord,
    TrafficScenario,
    normalize_angle,
    rigid_transform,
    validate,
)

TEMPLATES = ("straight", "t_junction", "crossing")
EXTENT = 120.0
LANE = 1.75
MAX_ACCEL = 6.0
TURN_SPEED = 6.0
DIMS = {"vehicle": (4.6, 1.9), "cyclist": (1.8, 0.7), "pedestrian": (0.6, 0.6)}
MIN_SEPARATION = 3.0  # smallest centre distance between any two agents at any step (no collisions)
MAX_PLACEMENT_ATTEMPTS = 50


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    template: str = "mixed"
    n_agents_min: int = 6
    n_agents_max: int = 10
    n_focal: int = 4
    n_past: int = 11
    n_future: int = 80
    dt: float = 0.1
    random_pose: bool = True

    def check(self) -> None:
        if self.template not in TEMPLATES + ("mixed",):
            raise ConfigurationError(f"unknown template {self.template!r}")
        if self.n_focal < 2:
            raise ConfigurationError("n_focal must be >= 2")
        if not 2 <= self.n_agents_min <= self.n_agents_max:
            raise ConfigurationError("need 2 <= n_agents_min <= n_agents_max")
        if self.n_focal > self.n_agents_min:
            raise ConfigurationError(
                f"n_focal={self.n_focal} exceeds the guaranteed agent count n_agents_min={self.n_agents_min}"
            )
        if self.n_past < 2 or self.n_future < 80 or self.dt <= 0:
            raise ConfigurationError("need n_past >= 2, n_future >= 80, dt > 0")


class Route:
    """Polyline path parameterised by arc length, extended linearly past both ends."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        keep = np.r_[True, np.linalg.norm(np.diff(pts, axis=0), axis=1) > 1e-9]
        self.pts = pts[keep]
        seg = np.diff(self.pts, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.dirs = seg / self.seg_len[:, None]
        self.cum = np.r_[0.0, np.cumsum(self.seg_len)]
        self.length = float(self.cum[-1])

    def point(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.dirs) - 1)
        return self.pts[i] + (s - self.cum[i])[..., None] * self.dirs[i]

    def tangent(self, s):
        s = np.asarray(s, dtype=float)
        i = np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.dirs) - 1)
        return self.dirs[i]


def _line(a, b, step=2.0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / step)))
    return a + np.linspace(0.0, 1.0, n + 1)[:, None] * (b - a)


def _bezier(p0, c, p2, n=40):
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    p0, c, p2 = (np.asarray(v, float) for v in (p0, c, p2))
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * c + t**2 * p2


def _chain(*pieces):
    return np.concatenate([pieces[0]] + [p[1:] for p in pieces[1:]])


@dataclass
class _Conflict:
    yield_route: str
    yield_class: str
    yield_speed: tuple[float, float]
    yield_s_conflict: float  # arc length at which the t=0 extrapolation meets the conflict point
    yield_s_stop: float
    prio_route: str
    prio_class: str
    prio_speed: tuple[float, float]
    prio_s_conflict: float
    clearance: float
    t_conflict: tuple[float, float]


@dataclass
class _Template:
    polylines: list
    lights: list
    routes: dict
    route_classes: dict
    conflict: _Conflict


def _edges_cross(L):
    w = 2 * LANE
    out = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            out.append(_line((sx * L, sy * w), (sx * w, sy * w), 4.0))
            out.append(_line((sx * w, sy * w), (sx * w, sy * L), 4.0))
    return out


def _straight_template(L=EXTENT) -> _Template:
    polylines = [
        ("lane_e", "lane", _line((-L, -LANE), (L, -LANE), 4.0)),
        ("lane_w", "lane", _line((L, LANE), (-L, LANE), 4.0)),
        ("edge_s", "road_marking", _line((-L, -2 * LANE), (L, -2 * LANE), 4.0)),
        ("edge_n", "road_marking", _line((-L, 2 * LANE), (L, 2 * LANE), 4.0)),
        ("center", "road_marking", _line((-L, 0.0), (L, 0.0), 4.0)),
        ("cw_0", "crosswalk", _line((20.0, -5.0), (20.0, 5.0), 2.5)),
        ("bump_0", "speed_bump", _line((-30.0, -3.5), (-30.0, 3.5), 3.5)),
    ]
    routes = {
        "veh_e": _line((-L, -LANE), (L, -LANE)),
        "veh_w": _line((L, LANE), (-L, LANE)),
        "cyc_e": _line((-L, -3.0), (L, -3.0)),
        "ped_n": _line((20.0, -8.0), (20.0, 8.0), 0.5),
        "ped_walk": _line((-L, -6.0), (L, -6.0)),
    }
    classes = {"vehicle": ["veh_e", "veh_w"], "cyclist": ["cyc_e"], "pedestrian": ["ped_walk", "ped_n"]}
    conflict = _Conflict(
        yield_route="veh_e", yield_class="vehicle", yield_speed=(6.0, 10.0),
        yield_s_conflict=L + 20.0, yield_s_stop=L + 20.0 - 5.0,
        prio_route="ped_n", prio_class="pedestrian", prio_speed=(1.2, 1.5),
        prio_s_conflict=8.0 - LANE, clearance=3.0, t_conflict=(2.5, 4.0),
    )
    return _Template(polylines, [], routes, classes, conflict)


def _t_junction_template(L=EXTENT) -> _Template:
    w = 2 * LANE
    polylines = [
        ("lane_e", "lane", _line((-L, -LANE), (L, -LANE), 4.0)),
        ("lane_w", "lane", _line((L, LANE), (-L, LANE), 4.0)),
        ("side_n", "lane", _line((LANE, -L), (LANE, -10.0), 4.0)),
        ("side_s", "lane", _line((-LANE, -10.0), (-LANE, -L), 4.0)),
        ("conn_left", "lane", _bezier((LANE, -10.0), (LANE, LANE), (-10.0, LANE), 8)),
        ("conn_right", "lane", _bezier((LANE, -10.0), (LANE, -LANE), (10.0, -LANE), 8)),
        ("conn_in", "lane", _bezier((-10.0, -LANE), (-LANE, -LANE), (-LANE, -10.0), 8)),
        ("edge_n", "road_marking", _line((-L, w), (L, w), 4.0)),
        ("edge_sw", "road_marking", _chain(_line((-L, -w), (-w, -w), 4.0), _line((-w, -w), (-w, -L), 4.0))),
        ("edge_se", "road_marking", _chain(_line((L, -w), (w, -w), 4.0), _line((w, -w), (w, -L), 4.0))),
        ("cw_side", "crosswalk", _line((-4.0, -12.0), (4.0, -12.0), 2.0)),
        ("stop_side", "stop_sign", np.array([[w, -10.0]])),
    ]
    routes = {
        "veh_e": _line((-L, -LANE), (L, -LANE)),
        "veh_w": _line((L, LANE), (-L, LANE)),
        "side_left": _chain(_line((LANE, -L), (LANE, -10.0)), _bezier((LANE, -10.0), (LANE, LANE), (-10.0, LANE)), _line((-10.0, LANE), (-L, LANE))),
        "side_right": _chain(_line((LANE, -L), (LANE, -10.0)), _bezier((LANE, -10.0), (LANE, -LANE), (10.0, -LANE)), _line((10.0, -LANE), (L, -LANE))),
        "cyc_w": _line((L, 3.0), (-L, 3.0)),
        "ped_walk": _line((-L, 6.0), (L, 6.0)),
    }
    classes = {"vehicle": ["veh_e", "veh_w", "side_right"], "cyclist": ["cyc_w"], "pedestrian": ["ped_walk"]}
    conflict = _Conflict(
        yield_route="side_left", yield_class="vehicle", yield_speed=(5.0, TURN_SPEED),
        yield_s_conflict=L + LANE, yield_s_stop=L - 11.0,
        prio_route="veh_w", prio_class="vehicle", prio_speed=(6.0, 12.0),
        prio_s_conflict=L - LANE, clearance=8.0, t_conflict=(3.5, 4.5),
    )
    return _Template(polylines, [], routes, classes, conflict)


def _crossing_template(L=EXTENT) -> _Template:
    polylines = [
        ("lane_e", "lane", _line((-L, -LANE), (L, -LANE), 4.0)),
        ("lane_w", "lane", _line((L, LANE), (-L, LANE), 4.0)),
        ("lane_n", "lane", _line((LANE, -L), (LANE, L), 4.0)),
        ("lane_s", "lane", _line((-LANE, L), (-LANE, -L), 4.0)),
        ("conn_ne", "lane", _bezier((LANE, -10.0), (LANE, -LANE), (10.0, -LANE), 8)),
        ("conn_nw", "lane", _bezier((LANE, -10.0), (LANE, LANE), (-10.0, LANE), 8)),
        ("conn_es", "lane", _bezier((-10.0, -LANE), (-LANE, -LANE), (-LANE, -10.0), 8)),
        ("conn_wn", "lane", _bezier((10.0, LANE), (LANE, LANE), (LANE, 10.0), 8)),
    ]
    for i, e in enumerate(_edges_cross(L)):
        polylines.append((f"edge_{i}", "road_marking", e))
    for name, a, b in (("cw_s", (-4.0, -12.0), (4.0, -12.0)), ("cw_n", (-4.0, 12.0), (4.0, 12.0)),
                       ("cw_w", (-12.0, -4.0), (-12.0, 4.0)), ("cw_e", (12.0, -4.0), (12.0, 4.0))):
        polylines.append((name, "crosswalk", _line(a, b, 2.0)))
    routes = {
        "veh_e": _line((-L, -LANE), (L, -LANE)),
        "veh_w": _line((L, LANE), (-L, LANE)),
        "veh_n": _line((LANE, -L), (LANE, L)),
        "veh_s": _line((-LANE, L), (-LANE, -L)),
        "veh_nr": _chain(_line((LANE, -L), (LANE, -10.0)), _bezier((LANE, -10.0), (LANE, -LANE), (10.0, -LANE)), _line((10.0, -LANE), (L, -LANE))),
        "cyc_s": _line((-3.0, L), (-3.0, -L)),
        "ped_walk": _line((6.0, -L), (6.0, -8.0)),
    }
    classes = {"vehicle": ["veh_e", "veh_w", "veh_s", "veh_nr"], "cyclist": ["cyc_s"], "pedestrian": ["ped_walk"]}
    conflict = _Conflict(
        yield_route="veh_n", yield_class="vehicle", yield_speed=(6.0, 10.0),
        yield_s_conflict=L - LANE, yield_s_stop=L - 11.0,
        prio_route="veh_e", prio_class="vehicle", prio_speed=(6.0, 12.0),
        prio_s_conflict=L + LANE, clearance=8.0, t_conflict=(3.0, 4.5),
    )
    return _Template(polylines, [], routes, classes, conflict)


_BUILDERS = {"straight": _straight_template, "t_junction": _t_junction_template, "crossing": _crossing_template}


def _speed_profile(v0, n_past, n_future, dt, a_past, controller, vmax):
    """Arc-length offsets (relative to t=0) and speeds for every step."""
    n = n_past + n_future
    cur = n_past - 1
    v = np.zeros(n)
    s = np.zeros(n)
    v[cur] = v0
    for i in range(cur - 1, -1, -1):
        v[i] = min(max(v[i + 1] - a_past * dt, 0.0), vmax)
        s[i] = s[i + 1] - 0.5 * (v[i] + v[i + 1]) * dt
    for i in range(cur + 1, n):
        t = (i - 1 - cur) * dt
        a = float(np.clip(controller(t, s[i - 1], v[i - 1]), -MAX_ACCEL, 3.0))
        v[i] = min(max(v[i - 1] + a * dt, 0.0), vmax)
        s[i] = s[i - 1] + 0.5 * (v[i - 1] + v[i]) * dt
    return s, v


def _cruise(a):
    return lambda t, s, v: a


def _yielding(stop_offset, t_go, a_go=2.0):
    def ctrl(t, s, v):
        if t >= t_go:
            return a_go
        remaining = stop_offset - s
        if v <= 1e-6:
            return 0.0
        return -v * v / (2.0 * max(remaining, 0.05))

    return ctrl


def _track(route: Route, s0, s_rel, speed, cls, rng):
    s = s0 + s_rel
    pos = route.point(s)
    tan = route.tangent(s)
    heading = normalize_angle(np.arctan2(tan[:, 1], tan[:, 0]))
    vel = speed[:, None] * tan
    states = np.column_stack([pos, heading, vel, np.ones(len(s))])
    length, width = DIMS[cls]
    jitter = 1.0 + 0.05 * rng.uniform(-1, 1)
    return states, round(length * jitter, 3), round(width * jitter, 3)


def _light_states(n_past, state):
    return tuple([state] * n_past)


def _sample_other(rng, tpl, routes, n_past, n_future, dt):
    """(class, states, length, width) of one background agent: parked or driving along a route."""
    cls = str(rng.choice(["vehicle", "vehicle", "vehicle", "vehicle", "cyclist", "pedestrian"]))
    route_name = rng.choice(tpl.route_classes[cls])
    route = routes[route_name]
    if cls == "vehicle" and rng.uniform() < 0.2:
        # parked car beside the road, heading along it
        s0 = rng.uniform(15.0, route.length - 15.0)
        p = route.point(s0)
        tan = route.tangent(s0)
        side = np.array([tan[1], -tan[0]]) * 3.8
        states = np.zeros((n_past + n_future, 6))
        states[:, :2] = p + side
        states[:, 2] = normalize_angle(math.atan2(tan[1], tan[0]))
        states[:, 5] = 1.0
        length, width = DIMS[cls]
        return cls, states, length, width
    lo, hi = {"vehicle": (3.0, 12.0), "cyclist": (3.0, 6.0), "pedestrian": (1.0, 1.6)}[cls]
    vmax = TURN_SPEED if route_name in ("side_left", "side_right", "veh_nr") else 16.0
    v0 = min(rng.uniform(lo, hi), vmax)
    a_past = rng.uniform(-0.5, 0.5)
    a_fut = rng.uniform(-1.0, 1.0)
    margin = min(10.0, 0.5 * route.length)
    s0 = rng.uniform(margin, route.length - margin)
    s_rel, spd = _speed_profile(v0, n_past, n_future, dt, a_past, _cruise(a_fut), vmax)
    states, length, width = _track(route, s0, s_rel, spd, cls, rng)
    return cls, states, length, width


def _min_gap(a, b) -> float:
    """Smallest centre distance between two state arrays over all steps."""
    return float(np.min(np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1])))


def generate_scene(rng: np.random.Generator, cfg: GeneratorConfig, scenario_id: str, template: str) -> TrafficScenario:
    tpl = _BUILDERS[template]()
    routes = {k: Route(v) for k, v in tpl.routes.items()}
    c = tpl.conflict
    n_past, n_future, dt = cfg.n_past, cfg.n_future, cfg.dt
    cur = n_past - 1

    t_c = rng.uniform(*c.t_conflict)
    v_y = rng.uniform(*c.yield_speed)
    v_p = rng.uniform(*c.prio_speed)
    s0_y = c.yield_s_conflict - v_y * t_c
    s0_p = c.prio_s_conflict - v_p * t_c
    t_go = t_c + c.clearance / v_p + rng.uniform(0.3, 1.0)
    vmax_y = TURN_SPEED if c.yield_route.startswith("side") else 14.0
    s_rel, spd = _speed_profile(v_y, n_past, n_future, dt, 0.0, _yielding(c.yield_s_stop - s0_y, t_go), vmax_y)
    yield_states, yl, yw = _track(routes[c.yield_route], s0_y, s_rel, spd, c.yield_class, rng)
    s_rel, spd = _speed_profile(v_p, n_past, n_future, dt, 0.0, _cruise(0.0), 20.0)
    prio_states, pl, pw = _track(routes[c.prio_route], s0_p, s_rel, spd, c.prio_class, rng)

    agents = [("yield", c.yield_class, yield_states, yl, yw), ("prio", c.prio_class, prio_states, pl, pw)]
    n_agents = int(rng.integers(cfg.n_agents_min, cfg.n_agents_max + 1))
    conflict_xy = yield_states[cur, :2]
    for k in range(n_agents - 2):
        for _attempt in range(MAX_PLACEMENT_ATTEMPTS):
            cand = _sample_other(rng, tpl, routes, n_past, n_future, dt)
            if all(_min_gap(cand[1], other[2]) >= MIN_SEPARATION for other in agents):
                agents.append(("other",) + cand)
                break
        else:
            raise ConfigurationError(f"{scenario_id}: no collision-free placement for agent {k + 2} "
                                     f"after {MAX_PLACEMENT_ATTEMPTS} attempts; lower n_agents_max")

    # extra focal agents: moving before static, then nearest to the conflict point.
    # They are chosen before validity gaps are cut so that every scene has enough.
    ranked = sorted(
        (float(np.linalg.norm(states[cur, 3:5])) <= 0.1, round(float(np.linalg.norm(states[cur, :2] - conflict_xy)), 9), idx)
        for idx, (role, _, states, _, _) in enumerate(agents) if role == "other"
    )
    extra_focal = [idx for *_, idx in ranked[: cfg.n_focal - 2]]

    # validity patterns on the remaining background agents
    tracks = []
    for idx, (role, cls, states, length, width) in enumerate(agents):
        states = states.copy()
        if role == "other" and idx not in extra_focal:
            u = rng.uniform()
            if u < 0.15:
                states[: int(rng.integers(1, 6)), :] = 0.0
            elif u < 0.25:
                states[: n_past + int(rng.integers(0, 10)), :] = 0.0
            elif u < 0.35:
                states[int(rng.integers(n_past + 40, n_past + n_future)) :, :] = 0.0
        tracks.append((role, cls, states, length, width))

    order = rng.permutation(len(tracks))
    new_name = {int(old_idx): f"a{new_idx}" for new_idx, old_idx in enumerate(order)}
    named = []
    for new_idx, old_idx in enumerate(order):
        role, cls, states, length, width = tracks[old_idx]
        named.append((f"a{new_idx}", role, cls, states, length, width))

    focal = [n for n, role, *_ in named if role == "yield"] + [n for n, role, *_ in named if role == "prio"]
    focal += [new_name[idx] for idx in extra_focal]
    if len(focal) < cfg.n_focal:
        raise ConfigurationError(f"{scenario_id}: only {len(focal)} agents usable as focal, {cfg.n_focal} requested")

    lights = []
    if template == "crossing":
        lights = [
            TrafficLightRecord("lane_n", (LANE, -10.0), _light_states(n_past, "stop")),
            TrafficLightRecord("lane_s", (-LANE, 10.0), _light_states(n_past, "stop")),
            TrafficLightRecord("lane_e", (-10.0, -LANE), _light_states(n_past, "go")),
            TrafficLightRecord("lane_w", (10.0, LANE), _light_states(n_past, "go")),
        ]
    scene = TrafficScenario(
        scenario_id=scenario_id,
        agents=tuple(AgentTrack(n, cls, states, length, width) for n, role, cls, states, length, width in named),
        map=tuple(MapPolyline(pid, kind, nodes) for pid, kind, nodes in tpl.polylines),
        traffic_lights=tuple(lights),
        focal_ids=tuple(focal),
        dt=dt, n_past=n_past, n_future=n_future,
    )
    if cfg.random_pose:
        scene = rigid_transform(scene, float(rng.uniform(-np.pi, np.pi)), rng.uniform(-200.0, 200.0, size=2))
    return validate(scene)


def generate_synthetic(seed: int, n_scenes: int, cfg: GeneratorConfig | None = None) -> list[TrafficScenario]:
    """Deterministic list of ``n_scenes`` scenes; scene i depends only on (seed, i, cfg)."""
    cfg = cfg or GeneratorConfig()
    if n_scenes < 1:
        raise ConfigurationError("n_scenes must be >= 1")
    cfg.check()
    scenes = []
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        template = cfg.template if cfg.template != "mixed" else TEMPLATES[int(rng.integers(len(TEMPLATES)))]
        scenes.append(generate_scene(rng, cfg, f"syn-{seed}-{i:04d}", template))
    return scenes
