"""Interaction analysis by clustering forecast waypoints.

At each future step the selected waypoints of all focal agents are clustered
with DBSCAN; a focal agent counts as *clustered* if one of its waypoints
ends up in a cluster together with a waypoint of another agent. The share of
clustered agents is reported for several ways of selecting waypoints:

* ``merged``      every mode at once;
* ``top_k``       each of the k most likely modes on its own, agent counts if
                  clustered in any of them;
* ``within_modes_avg``       mean over modes of the single-mode share;
* ``random_assignment_avg``  like ``within_modes_avg`` but every trajectory
                  is first given a random mode index (uniform on 0..K-1),
                  repeated several times per scene with a fixed seed.
"""

from __future__ import annotations

import csv
import io
import zlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .forecast import Forecast

EVALUATION_TYPES = ("merged", "top1", "top3", "top6", "random_baseline_avg", "within_mode_avg")
DEFAULT_EPS = 2.5
DEFAULT_MIN_PTS = 2
RANDOM_REPEATS = 6


# -- DBSCAN --------------------------------------------------------------------
def dbscan(points, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS, return_core: bool = False):
    """Cluster labels (0, 1, ...) per point; -1 marks noise.

    A point is core if at least ``min_pts`` points, itself included, lie
    within distance ``<= eps``. Points are scanned in input order, so cluster
    ids follow the first core point of each cluster, and a border point
    reachable from several clusters joins the one with the lowest id.
    With ``return_core`` the boolean core-point mask is returned as well.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return (labels, np.zeros(0, dtype=bool)) if return_core else labels
    diff = pts[:, None, :] - pts[None, :, :]
    near = np.hypot(diff[..., 0], diff[..., 1]) <= eps
    neighbours = [np.flatnonzero(row) for row in near]
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for q in neighbours[j]:
                if labels[q] == -1:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return (labels, core) if return_core else labels


# -- per-timestep clustering ------------------------------------------------------
@dataclass(frozen=True)
class WaypointCluster:
    t: int
    agents: tuple  # agent index per member
    modes: tuple  # mode index per member


def cluster_timestep(means: np.ndarray, t: int, selection=None, eps: float = DEFAULT_EPS,
                     min_pts: int = DEFAULT_MIN_PTS) -> list[WaypointCluster]:
    """Clusters among the selected waypoints at step ``t`` spanning >= 2 agents.

    ``means`` is (K, N, T, 2) in a common frame; ``selection`` a (K, N) bool
    mask of trajectories taking part (all by default).
    """
    K, N, T = means.shape[:3]
    if not 0 <= t < T:
        raise IndexError(f"timestep {t} outside 0..{T - 1}")
    sel = np.ones((K, N), dtype=bool) if selection is None else np.asarray(selection, dtype=bool)
    ks, agents = np.nonzero(sel)
    labels = dbscan(means[ks, agents, t], eps, min_pts)
    out = []
    for c in range(labels.max() + 1 if len(labels) else 0):
        idx = np.flatnonzero(labels == c)
        if len(set(agents[idx].tolist())) >= 2:
            out.append(WaypointCluster(t, tuple(agents[idx].tolist()), tuple(ks[idx].tolist())))
    return out


def clustered_agents(means: np.ndarray, selection=None, eps: float = DEFAULT_EPS,
                     min_pts: int = DEFAULT_MIN_PTS) -> np.ndarray:
    """(N,) bool: agent has a selected waypoint in a multi-agent cluster at some step."""
    K, N, T = means.shape[:3]
    hit = np.zeros(N, dtype=bool)
    sel = np.ones((K, N), dtype=bool) if selection is None else np.asarray(selection, dtype=bool)
    if len(set(np.nonzero(sel)[1].tolist())) < 2:
        return hit
    for t in range(T):
        for cl in cluster_timestep(means, t, sel, eps, min_pts):
            hit[list(cl.agents)] = True
    return hit


def mode_order(logits) -> np.ndarray:
    """Mode indices by logit, highest first (ties by index)."""
    return np.argsort(-np.asarray(logits), kind="stable")


def single_mode(K: int, N: int, k: int) -> np.ndarray:
    sel = np.zeros((K, N), dtype=bool)
    sel[k] = True
    return sel


def scene_rng(seed: int, scenario_id: str) -> np.random.Generator:
    """Per-scene generator; independent of the order scenes are processed in."""
    return np.random.default_rng([seed, zlib.crc32(scenario_id.encode("utf-8"))])


def random_assignments(K: int, N: int, rng: np.random.Generator, repeats: int = RANDOM_REPEATS) -> np.ndarray:
    """(repeats, K, N) pseudo-mode index per trajectory, uniform on 0..K-1."""
    return rng.integers(0, K, size=(repeats, K, N))


# -- dataset-level fractions --------------------------------------------------------
@dataclass
class SceneClusters:
    """Everything the report needs from one scene."""

    scenario_id: str
    agent_ids: tuple
    merged: np.ndarray  # (N,) bool
    per_mode: np.ndarray  # (K, N) bool, indexed by mode
    order: np.ndarray  # modes by logit
    random: np.ndarray  # (repeats, K, N) bool, indexed by pseudo-mode
    listing: list = field(default_factory=list)  # merged clusters


def analyze_scene(forecast: Forecast, seed: int = 0, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
                  repeats: int = RANDOM_REPEATS) -> SceneClusters:
    means = forecast.global_means()
    K, N, T = means.shape[:3]
    merged = np.zeros(N, dtype=bool)
    listing = []
    for t in range(T):
        for cl in cluster_timestep(means, t, None, eps, min_pts):
            merged[list(cl.agents)] = True
            listing.append(cl)
    per_mode = np.stack([clustered_agents(means, single_mode(K, N, k), eps, min_pts) for k in range(K)])
    assign = random_assignments(K, N, scene_rng(seed, forecast.scenario_id), repeats)
    rand = np.stack([
        np.stack([clustered_agents(means, assign[r] == j, eps, min_pts) for j in range(K)])
        for r in range(repeats)
    ])
    return SceneClusters(forecast.scenario_id, tuple(forecast.focal_ids), merged, per_mode,
                         mode_order(forecast.mode_logits), rand, listing)


def _pct(count, total) -> float:
    return 100.0 * count / total if total else 0.0


def clustered_agent_fraction(scenes, evaluation: str, k: int | None = None) -> float:
    """Share (in percent) of focal agents that fall into a cluster with another agent.

    ``scenes`` are :class:`SceneClusters`; ``evaluation`` is one of
    "merged", "top_k" (with ``k``), "within_modes_avg", "random_assignment_avg".
    """
    scenes = list(scenes)
    total = sum(len(s.merged) for s in scenes)
    if evaluation == "merged":
        return _pct(sum(int(s.merged.sum()) for s in scenes), total)
    if evaluation == "top_k":
        if k is None or k < 1:
            raise ValueError("top_k needs k >= 1")
        count = 0
        for s in scenes:
            K = s.per_mode.shape[0]
            if k > K:
                raise ValueError(f"k={k} exceeds the {K} forecast modes")
            count += int(s.per_mode[s.order[:k]].any(axis=0).sum())
        return _pct(count, total)
    if evaluation == "within_modes_avg":
        return float(np.mean(per_mode_fractions(scenes)))
    if evaluation == "random_assignment_avg":
        # (repeats, K) pooled counts, then the mean over pseudo-modes and repeats
        counts = sum(s.random.sum(axis=2) for s in scenes)
        return float(np.mean(100.0 * counts / total)) if total else 0.0
    raise ValueError(f"unknown evaluation {evaluation!r}")


def per_mode_fractions(scenes) -> np.ndarray:
    """(K,) percentage of focal agents clustered within each single mode."""
    scenes = list(scenes)
    total = sum(len(s.merged) for s in scenes)
    Ks = {s.per_mode.shape[0] for s in scenes}
    if len(Ks) != 1:
        raise ValueError(f"scenes disagree on the number of modes: {sorted(Ks)}")
    counts = sum(s.per_mode.sum(axis=1) for s in scenes)
    return 100.0 * counts / total if total else np.zeros(Ks.pop())


# -- report -------------------------------------------------------------------------
@dataclass
class InteractionReport:
    rows: list  # (evaluation_type, percentage)
    scenes: list  # SceneClusters

    def value(self, evaluation: str) -> float:
        return dict(self.rows)[evaluation]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["evaluation_type", "percentage"])
        for name, v in self.rows:
            w.writerow([name, f"{v:.6f}"])
        return buf.getvalue()

    def clusters_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario_id", "t", "cluster", "agent_id", "mode"])
        for s in self.scenes:
            for c, cl in enumerate(s.listing):
                for a, k in zip(cl.agents, cl.modes):
                    w.writerow([s.scenario_id, cl.t, c, s.agent_ids[a], k])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'Evaluation':<22}{'Clustered agents (%)':>22}"]
        lines += [f"{name:<22}{v:>22.2f}" for name, v in self.rows]
        return "\n".join(lines) + "\n"


def interaction_report(forecasts, seed: int = 0, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
                       repeats: int = RANDOM_REPEATS) -> InteractionReport:
    forecasts = list(forecasts)
    if not forecasts:
        raise ValueError("no forecasts to analyse")
    scenes = [analyze_scene(f, seed, eps, min_pts, repeats) for f in forecasts]
    K = min(s.per_mode.shape[0] for s in scenes)
    rows = [("merged", clustered_agent_fraction(scenes, "merged"))]
    for k in (1, 3, 6):
        if k <= K:
            rows.append((f"top{k}", clustered_agent_fraction(scenes, "top_k", k)))
    rows.append(("random_baseline_avg", clustered_agent_fraction(scenes, "random_assignment_avg")))
    rows.append(("within_mode_avg", clustered_agent_fraction(scenes, "within_modes_avg")))
    return InteractionReport(rows, scenes)
