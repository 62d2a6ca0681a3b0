"""Forecast container, frame conversion and the forecast file format."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .scenario import TrafficScenario, rotation


@dataclass(eq=False)
class Forecast:
    """Joint multimodal forecast for one scene.

    ``traj_params`` is (K, N, T, 5) holding (mu_x, mu_y, sigma_x, sigma_y, rho)
    in each focal agent's local frame; ``poses`` is (N, 3) of (theta, tx, ty)
    mapping local to global.
    """

    scenario_id: str
    focal_ids: tuple[str, ...]
    traj_params: np.ndarray
    mode_logits: np.ndarray
    poses: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.traj_params.shape[0]

    @property
    def horizon(self) -> int:
        return self.traj_params.shape[2]

    def probabilities(self) -> np.ndarray:
        z = self.mode_logits - self.mode_logits.max()
        e = np.exp(z)
        return e / e.sum()

    def global_means(self) -> np.ndarray:
        """Mean waypoints in the global frame, (K, N, T, 2)."""
        return local_to_global(self.traj_params[..., :2], self.poses)

    def permuted(self, order) -> "Forecast":
        order = np.asarray(order)
        return Forecast(self.scenario_id, tuple(self.focal_ids[i] for i in order),
                        self.traj_params[:, order], self.mode_logits.copy(), self.poses[order])


def local_to_global(xy: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Map (..., N, T, 2) local points with per-agent poses (N, 3) to the global frame."""
    out = np.empty_like(xy)
    for i, (theta, tx, ty) in enumerate(poses):
        R = rotation(theta)
        out[..., i, :, :] = xy[..., i, :, :] @ R.T + (tx, ty)
    return out


def global_to_local(xy: np.ndarray, poses: np.ndarray) -> np.ndarray:
    out = np.empty_like(xy)
    for i, (theta, tx, ty) in enumerate(poses):
        R = rotation(theta)
        out[..., i, :, :] = (xy[..., i, :, :] - (tx, ty)) @ R
    return out


def focal_poses(scenario: TrafficScenario, focal_ids=None) -> np.ndarray:
    cur = scenario.current_index
    ids = scenario.focal_ids if focal_ids is None else focal_ids
    return np.array([[scenario.agent(i).states[cur, 2], *scenario.agent(i).states[cur, :2]] for i in ids])


def ground_truth_forecast(scenario: TrafficScenario, n_modes: int = 6, horizon: int | None = None,
                          sigma: float = 1.0) -> Forecast:
    """A forecast whose every mode equals the recorded future (invalid steps hold the last valid position)."""
    horizon = scenario.n_future if horizon is None else horizon
    poses = focal_poses(scenario)
    lo = scenario.n_past
    gts = []
    for fid in scenario.focal_ids:
        a = scenario.agent(fid)
        pos = a.positions[lo : lo + horizon].copy()
        valid = a.valid[lo : lo + horizon]
        last = a.positions[scenario.current_index]
        for t in range(horizon):
            if valid[t]:
                last = pos[t]
            else:
                pos[t] = last
        gts.append(pos)
    local = global_to_local(np.stack(gts)[None], poses)[0]
    params = np.zeros((n_modes, len(poses), horizon, 5))
    params[..., :2] = local[None]
    params[..., 2:4] = sigma
    return Forecast(scenario.scenario_id, tuple(scenario.focal_ids), params, np.zeros(n_modes), poses)


def forecast_to_dict(f: Forecast) -> dict:
    return {
        "scenario_id": f.scenario_id,
        "focal_ids": list(f.focal_ids),
        "mode_logits": [float(v) for v in f.mode_logits],
        "poses": f.poses.tolist(),
        "traj_params": f.traj_params.tolist(),
    }


def forecast_from_dict(d: dict) -> Forecast:
    return Forecast(d["scenario_id"], tuple(d["focal_ids"]), np.asarray(d["traj_params"], dtype=float),
                    np.asarray(d["mode_logits"], dtype=float), np.asarray(d["poses"], dtype=float))


def save_forecasts(path, forecasts) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in forecasts:
            fh.write(json.dumps(forecast_to_dict(f), separators=(",", ":")))
            fh.write("\n")


def load_forecasts(path) -> list[Forecast]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(forecast_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from exc
    return out
