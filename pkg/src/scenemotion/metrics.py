"""Challenge-style forecasting metrics.

All metrics work on :class:`EvalScene` objects, which hold global-frame mean
trajectories next to the recorded future. Horizons are given in steps
(30, 50, 80 at 10 Hz for 3 s, 5 s, 8 s).

Conventions used throughout:

* an agent contributes to an ADE-type average at horizon ``h`` if it has at
  least one valid ground-truth step among the first ``h``; it contributes to
  FDE, miss rate and mAP only if step ``h - 1`` is valid;
* joint (scene-level) metrics first average over the scene's counted agents,
  then over scenes; marginal metrics use the same two-level average so that
  ``minADE <= minSADE`` holds on identical inputs;
* per-class numbers restrict every scene to its focal agents of that class.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .forecast import Forecast
from .scenario import AGENT_CLASSES, TrafficScenario

MISS_THRESHOLDS = {30: 2.0, 50: 3.6, 80: 6.0}
HORIZON_LABELS = {30: "3", 50: "5", 80: "8"}


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalScene:
    """One scene prepared for evaluation (global frame).

    pred: (K, N, T, 2) mean waypoints; probs: (K,) mode probabilities;
    gt: (N, T, 2); valid: (N, T); classes, widths: per focal agent;
    others / others_valid / others_widths: recorded future of non-focal agents.
    """

    scenario_id: str
    pred: np.ndarray
    probs: np.ndarray
    gt: np.ndarray
    valid: np.ndarray
    classes: tuple = ()
    widths: np.ndarray | None = None
    others: np.ndarray | None = None
    others_valid: np.ndarray | None = None
    others_widths: np.ndarray | None = None

    @property
    def n_modes(self) -> int:
        return self.pred.shape[0]

    def mode_rank(self) -> np.ndarray:
        """rank[k] = position of mode k when sorted by probability (descending, stable)."""
        order = np.argsort(-self.probs, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        return rank

    def subset(self, keep) -> "EvalScene":
        keep = np.asarray(keep, dtype=bool)
        return EvalScene(
            self.scenario_id, self.pred[:, keep], self.probs, self.gt[keep], self.valid[keep],
            tuple(c for c, k in zip(self.classes, keep) if k),
            None if self.widths is None else self.widths[keep],
            self.others, self.others_valid, self.others_widths,
        )


def eval_scene(forecast: Forecast, scenario: TrafficScenario) -> EvalScene:
    """Pair a forecast with its scenario's recorded future."""
    if forecast.scenario_id != scenario.scenario_id:
        raise MetricError(f"forecast for {forecast.scenario_id!r} paired with scenario {scenario.scenario_id!r}")
    T = forecast.horizon
    lo = scenario.n_past
    if scenario.n_future < T:
        raise MetricError(f"{scenario.scenario_id}: forecast horizon {T} exceeds recorded future {scenario.n_future}")
    focal = [scenario.agent(i) for i in forecast.focal_ids]
    others = [a for a in scenario.agents if a.agent_id not in set(forecast.focal_ids)]
    gt = np.stack([a.positions[lo : lo + T] for a in focal])
    valid = np.stack([a.valid[lo : lo + T] for a in focal])
    if others:
        o = np.stack([a.positions[lo : lo + T] for a in others])
        ov = np.stack([a.valid[lo : lo + T] for a in others])
        ow = np.array([a.width for a in others])
    else:
        o, ov, ow = np.zeros((0, T, 2)), np.zeros((0, T), dtype=bool), np.zeros(0)
    return EvalScene(
        scenario.scenario_id, forecast.global_means(), forecast.probabilities(), gt, valid,
        tuple(a.agent_class for a in focal), np.array([a.width for a in focal]), o, ov, ow,
    )


def eval_scenes(forecasts, scenarios) -> list[EvalScene]:
    """Match forecasts to scenarios by id (forecast order is kept)."""
    by_id = {s.scenario_id: s for s in scenarios}
    out = []
    for f in forecasts:
        if f.scenario_id not in by_id:
            raise MetricError(f"no scenario for forecast {f.scenario_id!r}")
        out.append(eval_scene(f, by_id[f.scenario_id]))
    return out


# -- displacement helpers ------------------------------------------------------
def _check(scenes, horizon):
    if not scenes:
        raise MetricError("empty scene set")
    for s in scenes:
        if s.pred.shape[2] < horizon:
            raise MetricError(f"{s.scenario_id}: forecast shorter than horizon {horizon}")


def _ade(s: EvalScene, h: int):
    """(K, N) mean displacement over valid steps < h, and the counted-agent mask (N,)."""
    v = s.valid[:, :h]
    d = np.linalg.norm(s.pred[:, :, :h] - s.gt[None, :, :h], axis=-1)
    cnt = v.sum(axis=1)
    ade = (d * v[None]).sum(axis=2) / np.maximum(cnt, 1)[None]
    return ade, cnt > 0


def _fde(s: EvalScene, h: int):
    """(K, N) displacement at step h-1 and the mask of agents valid there."""
    d = np.linalg.norm(s.pred[:, :, h - 1] - s.gt[None, :, h - 1], axis=-1)
    return d, s.valid[:, h - 1].astype(bool)


def _scene_mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else float("nan")


def min_sade(scenes, horizon: int) -> float:
    """Scene-wide best mode by average displacement, averaged over scenes."""
    _check(scenes, horizon)
    per = []
    for s in scenes:
        ade, has = _ade(s, horizon)
        per.append(float(ade[:, has].mean(axis=1).min()) if has.any() else None)
    return _scene_mean(per)


def min_sfde(scenes, horizon: int) -> float:
    _check(scenes, horizon)
    per = []
    for s in scenes:
        fde, has = _fde(s, horizon)
        per.append(float(fde[:, has].mean(axis=1).min()) if has.any() else None)
    return _scene_mean(per)


def min_ade(scenes, horizon: int) -> float:
    """Per-agent best mode, averaged over the scene's agents, then over scenes."""
    _check(scenes, horizon)
    per = []
    for s in scenes:
        ade, has = _ade(s, horizon)
        per.append(float(ade[:, has].min(axis=0).mean()) if has.any() else None)
    return _scene_mean(per)


def min_fde(scenes, horizon: int) -> float:
    _check(scenes, horizon)
    per = []
    for s in scenes:
        fde, has = _fde(s, horizon)
        per.append(float(fde[:, has].min(axis=0).mean()) if has.any() else None)
    return _scene_mean(per)


def miss_threshold(horizon: int) -> float:
    try:
        return MISS_THRESHOLDS[horizon]
    except KeyError:
        raise MetricError(f"no miss threshold for horizon {horizon}; use one of {sorted(MISS_THRESHOLDS)}") from None


def _joint_best_mode(s: EvalScene, h: int):
    ade, has = _ade(s, h)
    if not has.any():
        return None
    return int(np.argmin(ade[:, has].mean(axis=1)))


def miss_rate(scenes, horizon: int, joint: bool = True) -> float:
    """Fraction of scenes (joint) or agents (marginal) that miss at ``horizon``."""
    tau = miss_threshold(horizon)
    _check(scenes, horizon)
    missed = total = 0
    for s in scenes:
        fde, has = _fde(s, horizon)
        if not has.any():
            continue
        if joint:
            k = _joint_best_mode(s, horizon)
            total += 1
            missed += int(np.any(fde[k, has] > tau))
        else:
            total += int(has.sum())
            missed += int(np.sum(~np.any(fde[:, has] <= tau, axis=0)))
    return missed / total if total else float("nan")


def overlap_rate(scenes, horizon: int | None = None) -> float:
    """Fraction of focal agents whose most-likely-mode disc overlaps another agent's disc.

    Discs have radius width/2. Other focal agents are represented by their
    predicted positions (same mode), non-focal agents by their recorded
    positions at valid steps. Discs overlap when centre distance < r_a + r_b.
    """
    if not scenes:
        raise MetricError("empty scene set")
    hit = total = 0
    for s in scenes:
        h = s.pred.shape[2] if horizon is None else horizon
        k = int(np.argmax(s.probs))
        p = s.pred[k, :, :h]  # (N, h, 2)
        r = s.widths / 2.0
        N = p.shape[0]
        over = np.zeros(N, dtype=bool)
        if N > 1:
            d = np.linalg.norm(p[:, None] - p[None], axis=-1)  # (N, N, h)
            close = d < (r[:, None] + r[None, :])[..., None]
            close[np.arange(N), np.arange(N)] = False
            over |= close.any(axis=(1, 2))
        if s.others is not None and len(s.others):
            d = np.linalg.norm(p[:, None] - s.others[None, :, :h], axis=-1)  # (N, M, h)
            close = (d < (r[:, None] + s.others_widths[None, :] / 2.0)[..., None]) & s.others_valid[None, :, :h]
            over |= close.any(axis=(1, 2))
        hit += int(over.sum())
        total += N
    return hit / total if total else float("nan")


# -- mAP --------------------------------------------------------------------------
def average_precision(hits, n_gt: int, group=None, soft: bool = False) -> float:
    """AP of a confidence-sorted prediction list under interpolated precision.

    ``hits[j]`` says whether prediction j hits its ground truth; ``group[j]``
    identifies that ground truth (defaults to a distinct gt per prediction).
    Only the first hit per group is a true positive; later hits are false
    positives, or skipped entirely if ``soft``.
    """
    if n_gt <= 0:
        raise MetricError("average precision needs at least one ground truth")
    hits = list(hits)
    group = list(range(len(hits))) if group is None else list(group)
    matched = set()
    tp = fp = 0
    precisions, is_tp = [], []
    for hit, g in zip(hits, group):
        if hit and g not in matched:
            matched.add(g)
            tp += 1
            is_tp.append(True)
        elif hit and soft:
            continue
        else:
            fp += 1
            is_tp.append(False)
        precisions.append(tp / (tp + fp))
    if not precisions:
        return 0.0
    interp = np.maximum.accumulate(np.array(precisions)[::-1])[::-1]
    return float(interp[np.array(is_tp)].sum() / n_gt)


def _predictions(scenes, horizon, joint):
    """(confidence, rank, scene, agent, hit) tuples and the gt count."""
    tau = miss_threshold(horizon)
    preds, n_gt = [], 0
    for si, s in enumerate(scenes):
        fde, has = _fde(s, horizon)
        if not has.any():
            continue
        rank = s.mode_rank()
        if joint:
            n_gt += 1
            ok = np.all(fde[:, has] <= tau, axis=1)
            preds.extend((s.probs[k], rank[k], si, -1, bool(ok[k])) for k in range(s.n_modes))
        else:
            for i in np.flatnonzero(has):
                n_gt += 1
                preds.extend((s.probs[k], rank[k], si, int(i), bool(fde[k, i] <= tau)) for k in range(s.n_modes))
    # confidence descending; ties by a scene's own mode ranking, then input order
    preds.sort(key=lambda p: (-p[0], p[1], p[2], p[3]))
    return preds, n_gt


def map_metric(scenes, horizon: int, joint: bool = True, soft: bool = False) -> float:
    """Average precision over the whole set (single trajectory-shape bucket)."""
    _check(scenes, horizon)
    preds, n_gt = _predictions(scenes, horizon, joint)
    if n_gt == 0:
        return float("nan")
    return average_precision([p[4] for p in preds], n_gt, [(p[2], p[3]) for p in preds], soft)


# -- report ------------------------------------------------------------------------
METRICS = (
    ("minSADE", lambda sc, h: min_sade(sc, h)),
    ("minSFDE", lambda sc, h: min_sfde(sc, h)),
    ("minADE", lambda sc, h: min_ade(sc, h)),
    ("minFDE", lambda sc, h: min_fde(sc, h)),
    ("MR_joint", lambda sc, h: miss_rate(sc, h, joint=True)),
    ("MR_marginal", lambda sc, h: miss_rate(sc, h, joint=False)),
    ("OR", lambda sc, h: overlap_rate(sc, h)),
    ("mAP_joint", lambda sc, h: map_metric(sc, h, joint=True)),
    ("softmAP_joint", lambda sc, h: map_metric(sc, h, joint=True, soft=True)),
    ("mAP_marginal", lambda sc, h: map_metric(sc, h, joint=False)),
    ("softmAP_marginal", lambda sc, h: map_metric(sc, h, joint=False, soft=True)),
)
METRIC_NAMES = tuple(name for name, _ in METRICS)
JOINT_METRICS = ("minSADE", "minSFDE", "MR_joint", "OR", "mAP_joint", "softmAP_joint")
MARGINAL_METRICS = ("minADE", "minFDE", "MR_marginal", "OR", "mAP_marginal", "softmAP_marginal")


def _class_scenes(scenes, cls):
    out = []
    for s in scenes:
        keep = np.array([c == cls for c in s.classes], dtype=bool)
        if keep.any():
            out.append(s.subset(keep))
    return out


@dataclass
class MetricReport:
    """Rows of (object_class, horizon label, metric, value)."""

    rows: list

    def value(self, cls: str, horizon: str, metric: str) -> float:
        for c, h, m, v in self.rows:
            if (c, h, m) == (cls, horizon, metric):
                return v
        raise KeyError((cls, horizon, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["object_class", "horizon_s", "metric", "value"])
        for c, h, m, v in self.rows:
            w.writerow([c, h, m, _fmt(v)])
        return buf.getvalue()

    def to_text(self) -> str:
        names = list(dict.fromkeys(m for _, _, m, _ in self.rows))
        keys = list(dict.fromkeys((c, h) for c, h, _, _ in self.rows))
        table = {(c, h, m): v for c, h, m, v in self.rows}
        head = f"{'Object type':<12}{'Time (s)':>9}" + "".join(f"{n:>17}" for n in names)
        lines = [head, "-" * len(head)]
        for c, h in keys:
            lines.append(f"{c:<12}{h:>9}" + "".join(f"{_fmt(table[(c, h, n)]):>17}" for n in names))
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def evaluate(scenes, horizons=(30, 50, 80), classes=AGENT_CLASSES, metrics=METRIC_NAMES) -> MetricReport:
    """Full table: every class and the class mean, each horizon plus the horizon average."""
    if not scenes:
        raise MetricError("empty scene set")
    unknown = set(metrics) - set(METRIC_NAMES)
    if unknown:
        raise MetricError(f"unknown metrics {sorted(unknown)}")
    chosen = [(name, fn) for name, fn in METRICS if name in metrics]
    table = {}
    for cls in classes:
        sub = _class_scenes(scenes, cls)
        for h in horizons:
            for name, fn in chosen:
                table[(cls, h, name)] = fn(sub, h) if sub else float("nan")
    rows = []
    labels = [HORIZON_LABELS.get(h, str(h)) for h in horizons]
    for cls in list(classes) + ["all"]:
        for h, lab in zip(horizons, labels):
            for name, _ in chosen:
                if cls == "all":
                    vals = [table[(c, h, name)] for c in classes]
                    vals = [v for v in vals if v == v]
                    v = float(np.mean(vals)) if vals else float("nan")
                else:
                    v = table[(cls, h, name)]
                rows.append((cls, lab, name, v))
        for name, _ in chosen:
            vals = [r[3] for r in rows if r[0] == cls and r[2] == name and r[1] in labels]
            rows.append((cls, "avg", name, float(np.mean(vals)) if all(x == x for x in vals) else float("nan")))
    return MetricReport(rows)
