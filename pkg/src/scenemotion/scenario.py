"""Traffic scenario data model, line-delimited JSON I/O and rigid transforms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane", "road_marking", "crosswalk", "speed_bump", "stop_sign")
LIGHT_STATES = ("unknown", "stop", "caution", "go")
STATE_FIELDS = ("x", "y", "heading", "vx", "vy", "valid")
HORIZON_STEPS = (30, 50, 80)


class ScenarioParseError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class ScenarioValidationError(ValueError):
    def __init__(self, scenario_id: str, field_name: str, msg: str):
        super().__init__(f"scenario {scenario_id!r}, field {field_name!r}: {msg}")
        self.scenario_id = scenario_id
        self.field = field_name


def normalize_angle(a):
    """Wrap angles to (-pi, pi]; angles already in range are returned unchanged."""
    a = np.asarray(a, dtype=float)
    wrapped = np.pi - np.mod(np.pi - a, 2.0 * np.pi)
    return np.where((a > -np.pi) & (a <= np.pi), a, wrapped)


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """One agent; ``states`` is (n_steps, 6) with columns x, y, heading, vx, vy, valid."""

    agent_id: str
    agent_class: str
    states: np.ndarray
    length: float
    width: float

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(self.states).reshape(-1, len(STATE_FIELDS)))

    @property
    def valid(self) -> np.ndarray:
        return self.states[:, 5] > 0.5

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.agent_class == other.agent_class
            and self.length == other.length
            and self.width == other.width
            and np.array_equal(self.states, other.states)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MapPolyline:
    polyline_id: str
    kind: str
    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes).reshape(-1, 2))

    def __eq__(self, other):
        if not isinstance(other, MapPolyline):
            return NotImplemented
        return self.polyline_id == other.polyline_id and self.kind == other.kind and np.array_equal(self.nodes, other.nodes)

    __hash__ = None


@dataclass(frozen=True)
class TrafficLightRecord:
    lane_ref: str
    stop_point: tuple[float, float]
    states: tuple[str, ...]


@dataclass(frozen=True)
class TrafficScenario:
    scenario_id: str
    agents: tuple[AgentTrack, ...]
    map: tuple[MapPolyline, ...]
    traffic_lights: tuple[TrafficLightRecord, ...]
    focal_ids: tuple[str, ...]
    dt: float = 0.1
    n_past: int = 11
    n_future: int = 80

    def __post_init__(self):
        for name in ("agents", "map", "traffic_lights", "focal_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def n_steps(self) -> int:
        return self.n_past + self.n_future

    @property
    def current_index(self) -> int:
        """Index of t=0 (last history step)."""
        return self.n_past - 1

    def agent(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def focal_agents(self) -> list[AgentTrack]:
        return [self.agent(i) for i in self.focal_ids]


def validate(s: TrafficScenario) -> TrafficScenario:
    """Raise ScenarioValidationError on the first broken invariant."""
    sid = s.scenario_id

    def fail(field_name, msg):
        raise ScenarioValidationError(sid, field_name, msg)

    if not (s.dt > 0 and math.isfinite(s.dt)):
        fail("dt", "must be positive")
    if s.n_past < 1:
        fail("n_past", "must be >= 1")
    if s.n_future < max(HORIZON_STEPS):
        fail("n_future", f"must cover the {max(HORIZON_STEPS)}-step horizon")
    ids = [a.agent_id for a in s.agents]
    if len(set(ids)) != len(ids):
        fail("agents", "duplicate agent_id")
    for a in s.agents:
        if a.agent_class not in AGENT_CLASSES:
            fail("agent_class", f"{a.agent_id}: unknown class {a.agent_class!r}")
        if a.states.shape != (s.n_steps, len(STATE_FIELDS)):
            fail("states", f"{a.agent_id}: expected {s.n_steps} state slots, got {a.states.shape[0]}")
        if not np.all(np.isfinite(a.states)):
            fail("states", f"{a.agent_id}: non-finite value")
        if not (a.length > 0 and a.width > 0):
            fail("length", f"{a.agent_id}: dimensions must be positive")
        h = a.states[:, 2]
        if np.any(h <= -np.pi) or np.any(h > np.pi):
            fail("heading", f"{a.agent_id}: heading outside (-pi, pi]")
        if not np.all(np.isin(a.states[:, 5], (0.0, 1.0))):
            fail("valid", f"{a.agent_id}: valid flag must be 0 or 1")
    for p in s.map:
        if p.kind not in MAP_KINDS:
            fail("kind", f"{p.polyline_id}: unknown kind {p.kind!r}")
        if len(p.nodes) < 1 or not np.all(np.isfinite(p.nodes)):
            fail("nodes", f"{p.polyline_id}: need >= 1 finite node")
    for tl in s.traffic_lights:
        if len(tl.states) != s.n_past:
            fail("traffic_lights", f"{tl.lane_ref}: states length {len(tl.states)} != n_past")
        if any(st not in LIGHT_STATES for st in tl.states):
            fail("traffic_lights", f"{tl.lane_ref}: unknown light state")
    by_id = {a.agent_id: a for a in s.agents}
    if not s.focal_ids:
        fail("focal_ids", "no focal agents")
    if len(set(s.focal_ids)) != len(s.focal_ids):
        fail("focal_ids", "duplicate focal id")
    for fid in s.focal_ids:
        if fid not in by_id:
            fail("focal_ids", f"unknown agent {fid!r}")
        if not by_id[fid].valid[s.current_index]:
            fail("focal_ids", f"agent {fid!r} is not valid at t=0")
    return s


# -- serialisation ------------------------------------------------------------
def scenario_to_dict(s: TrafficScenario) -> dict:
    return {
        "scenario_id": s.scenario_id,
        "dt": float(s.dt),
        "n_past": int(s.n_past),
        "n_future": int(s.n_future),
        "agents": [
            {
                "agent_id": a.agent_id,
                "agent_class": a.agent_class,
                "states": [
                    {"x": float(r[0]), "y": float(r[1]), "heading": float(r[2]),
                     "vx": float(r[3]), "vy": float(r[4]), "valid": bool(r[5] > 0.5)}
                    for r in a.states
                ],
                "length": float(a.length),
                "width": float(a.width),
            }
            for a in s.agents
        ],
        "map": [
            {"polyline_id": p.polyline_id, "kind": p.kind, "nodes": [[float(x), float(y)] for x, y in p.nodes]}
            for p in s.map
        ],
        "traffic_lights": [
            {"lane_ref": tl.lane_ref, "stop_point": [float(tl.stop_point[0]), float(tl.stop_point[1])], "states": list(tl.states)}
            for tl in s.traffic_lights
        ],
        "focal_ids": list(s.focal_ids),
    }


def _expect_keys(obj, keys, where):
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    missing = set(keys) - set(obj)
    extra = set(obj) - set(keys)
    if missing:
        raise ValueError(f"{where}: missing field(s) {sorted(missing)}")
    if extra:
        raise ValueError(f"{where}: unknown field(s) {sorted(extra)}")


def scenario_from_dict(d: dict) -> TrafficScenario:
    _expect_keys(d, ("scenario_id", "dt", "n_past", "n_future", "agents", "map", "traffic_lights", "focal_ids"), "scenario")
    agents = []
    for a in d["agents"]:
        _expect_keys(a, ("agent_id", "agent_class", "states", "length", "width"), "agent")
        rows = []
        for r in a["states"]:
            _expect_keys(r, STATE_FIELDS, "state")
            rows.append([r["x"], r["y"], r["heading"], r["vx"], r["vy"], 1.0 if r["valid"] else 0.0])
        agents.append(AgentTrack(a["agent_id"], a["agent_class"], np.array(rows, dtype=float).reshape(-1, 6),
                                 float(a["length"]), float(a["width"])))
    polylines = []
    for p in d["map"]:
        _expect_keys(p, ("polyline_id", "kind", "nodes"), "map polyline")
        polylines.append(MapPolyline(p["polyline_id"], p["kind"], np.array(p["nodes"], dtype=float).reshape(-1, 2)))
    lights = []
    for tl in d["traffic_lights"]:
        _expect_keys(tl, ("lane_ref", "stop_point", "states"), "traffic light")
        lights.append(TrafficLightRecord(tl["lane_ref"], (float(tl["stop_point"][0]), float(tl["stop_point"][1])), tuple(tl["states"])))
    return TrafficScenario(
        scenario_id=d["scenario_id"], agents=tuple(agents), map=tuple(polylines), traffic_lights=tuple(lights),
        focal_ids=tuple(d["focal_ids"]), dt=float(d["dt"]), n_past=int(d["n_past"]), n_future=int(d["n_future"]),
    )


def save_scenarios(path, scenarios: Iterable[TrafficScenario]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenarios:
            fh.write(json.dumps(scenario_to_dict(s), separators=(",", ":")))
            fh.write("\n")


def load_scenarios(path) -> list[TrafficScenario]:
    """Read one scenario per line; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                s = scenario_from_dict(json.loads(line))
            except (ValueError, TypeError, KeyError, IndexError) as exc:
                raise ScenarioParseError(line_no, str(exc)) from exc
            out.append(validate(s))
    return out


# -- rigid transforms -----------------------------------------------------------
def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def compose_rigid(theta2, t2, theta1, t1):
    """Parameters of rigid(theta2, t2) after rigid(theta1, t1)."""
    t = rotation(theta2) @ np.asarray(t1, float) + np.asarray(t2, float)
    return theta1 + theta2, (float(t[0]), float(t[1]))


def rigid_transform(s: TrafficScenario, theta: float, t) -> TrafficScenario:
    """Rotate everything by ``theta`` about the origin, then translate by ``t``."""
    t = np.asarray(t, dtype=float)
    if not (math.isfinite(theta) and np.all(np.isfinite(t)) and t.shape == (2,)):
        raise ValueError("rigid_transform needs finite theta and a finite 2-vector t")
    R = rotation(theta)
    agents = []
    for a in s.agents:
        st = np.array(a.states)
        v = st[:, 5] > 0.5
        st[v, 0:2] = st[v, 0:2] @ R.T + t
        st[v, 2] = normalize_angle(st[v, 2] + theta)
        st[v, 3:5] = st[v, 3:5] @ R.T
        agents.append(AgentTrack(a.agent_id, a.agent_class, st, a.length, a.width))
    polylines = [MapPolyline(p.polyline_id, p.kind, p.nodes @ R.T + t) for p in s.map]
    lights = []
    for tl in s.traffic_lights:
        sp = R @ np.asarray(tl.stop_point, float) + t
        lights.append(TrafficLightRecord(tl.lane_ref, (float(sp[0]), float(sp[1])), tl.states))
    return TrafficScenario(s.scenario_id, tuple(agents), tuple(polylines), tuple(lights), s.focal_ids, s.dt, s.n_past, s.n_future)


def future_ground_truth(s: TrafficScenario, agent_ids: Sequence[str] | None = None, horizon: int | None = None):
    """Global-frame future positions (N, T, 2) and validity (N, T)."""
    agent_ids = s.focal_ids if agent_ids is None else agent_ids
    horizon = s.n_future if horizon is None else horizon
    lo = s.n_past
    pos = np.stack([s.agent(i).positions[lo : lo + horizon] for i in agent_ids])
    valid = np.stack([s.agent(i).valid[lo : lo + horizon] for i in agent_ids])
    return pos, valid
