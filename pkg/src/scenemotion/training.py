"""Losses, winner-takes-all assignment, optimiser and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .model import ForecastTensors, SceneBatch, SceneMotion, concat_batches, prepare_batch
from .nn import cross_entropy
from .tensor import Tensor
from .views import ViewConfig

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class AssignmentError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    scenes_per_batch: int = 4
    lr0: float = 2e-4
    lr_halving_period: int = 20
    weight_decay: float = 1e-2
    epochs_joint: int = 50
    epochs_marginal_finetune: int = 40
    grad_clip: float = 1.0
    scale_warmup_epochs: int = 0
    nll_weight: float = 1.0
    ce_weight: float = 1.0
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("scenes_per_batch", "lr_halving_period", "epochs_joint", "epochs_marginal_finetune", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.scale_warmup_epochs < 0:
            raise ValueError("scale_warmup_epochs must be >= 0")
        if not self.lr0 > 0 or self.weight_decay < 0 or not self.grad_clip > 0:
            raise ValueError("lr0 and grad_clip must be positive, weight_decay non-negative")


# -- Gaussian NLL --------------------------------------------------------------
def bivariate_nll(mu_x, mu_y, sigma_x, sigma_y, rho, x, y):
    """Negative log density of a 2-D Gaussian at (x, y). Works elementwise on arrays."""
    sigma_x, sigma_y, rho = (np.asarray(v, dtype=float) for v in (sigma_x, sigma_y, rho))
    if np.any(sigma_x <= 0) or np.any(sigma_y <= 0) or np.any(np.abs(rho) >= 1):
        raise ValueError("bivariate_nll needs sigma > 0 and |rho| < 1")
    dx = (np.asarray(x, float) - mu_x) / sigma_x
    dy = (np.asarray(y, float) - mu_y) / sigma_y
    one_m = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    return LOG_2PI + np.log(sigma_x) + np.log(sigma_y) + 0.5 * np.log(one_m) + z / (2.0 * one_m)


def gaussian_nll(mu: Tensor, log_sigma: Tensor, rho: Tensor, target: np.ndarray) -> Tensor:
    """Tensor version taking log-sigma; mu/log_sigma (..., 2), rho (...), target (..., 2)."""
    inv = T.exp(-log_sigma)
    d = (T.as_tensor(target) - mu) * inv
    dx, dy = d[..., 0], d[..., 1]
    one_m = 1.0 - rho * rho
    z = dx * dx + dy * dy - 2.0 * rho * dx * dy
    return LOG_2PI + log_sigma[..., 0] + log_sigma[..., 1] + 0.5 * T.log(one_m) + z / (2.0 * one_m)


# -- winner-takes-all ------------------------------------------------------------
def _agent_ade(mu: np.ndarray, gt: np.ndarray, valid: np.ndarray):
    """Per (mode, agent) mean displacement over valid steps and per-agent validity.

    mu (..., K, N, T, 2), gt (..., N, T, 2), valid (..., N, T).
    """
    disp = np.linalg.norm(mu - gt[..., None, :, :, :], axis=-1)
    cnt = valid.sum(axis=-1)
    ade = (disp * valid[..., None, :, :]).sum(axis=-1) / np.maximum(cnt, 1)[..., None, :]
    return ade, cnt > 0


def wta_joint(mu: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> int:
    """Scene-wide winner: mode minimising the displacement averaged over agents.

    mu (K, N, T, 2), gt (N, T, 2), valid (N, T). Ties go to the smallest mode index.
    """
    ade, has = _agent_ade(np.asarray(mu), np.asarray(gt), np.asarray(valid, bool))
    if not has.any():
        raise AssignmentError("no valid ground-truth step for any agent")
    return int(np.argmin(ade[:, has].mean(axis=1)))


def wta_marginal(mu: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Per-agent winner indices (N,); agents without valid steps get 0."""
    ade, has = _agent_ade(np.asarray(mu), np.asarray(gt), np.asarray(valid, bool))
    if not has.any():
        raise AssignmentError("no valid ground-truth step for any agent")
    return np.argmin(ade, axis=0)


def _batch_winners(mu, gt, valid, agent_mask, mode):
    S = mu.shape[0]
    valid = valid & agent_mask[..., None]
    if mode == "joint":
        return np.array([wta_joint(mu[s], gt[s], valid[s]) for s in range(S)])
    return np.stack([wta_marginal(mu[s], gt[s], valid[s]) for s in range(S)])


def total_loss(out: ForecastTensors, gt: np.ndarray, valid: np.ndarray, agent_mask: np.ndarray,
               mode: str = "joint", nll_weight: float = 1.0, ce_weight: float = 1.0):
    """Winner-mode NLL + mode cross-entropy, averaged over scenes.

    Returns (loss tensor, winners) with winners (S,) for joint or (S, N) for marginal.
    """
    if mode not in ("joint", "marginal"):
        raise ValueError(f"unknown WTA mode {mode!r}")
    S, K, N = out.mu.shape[:3]
    valid = valid & agent_mask[..., None]
    winners = _batch_winners(out.mu.data, gt, valid, agent_mask, mode)
    sidx = np.arange(S)
    if mode == "joint":
        mu, ls, rho = out.mu[sidx, winners], out.log_sigma[sidx, winners], out.rho[sidx, winners]
        nll = gaussian_nll(mu, ls, rho, gt)  # (S, N, T)
        w = valid / np.maximum(valid.sum(axis=(1, 2), keepdims=True), 1)
        nll_term = (nll * w).sum(axis=(1, 2))
        ce_term = cross_entropy(out.mode_logits, winners)
    else:
        s_i = np.repeat(sidx[:, None], N, axis=1)
        a_i = np.repeat(np.arange(N)[None], S, axis=0)
        mu, ls, rho = out.mu[s_i, winners, a_i], out.log_sigma[s_i, winners, a_i], out.rho[s_i, winners, a_i]
        nll = gaussian_nll(mu, ls, rho, gt)
        per_agent = (nll * (valid / np.maximum(valid.sum(axis=2, keepdims=True), 1))).sum(axis=2)  # (S, N)
        has = valid.any(axis=2)
        aw = has / np.maximum(has.sum(axis=1, keepdims=True), 1)
        nll_term = (per_agent * aw).sum(axis=1)
        logp = T.log_softmax(out.mode_logits, axis=-1)
        ce_term = -(logp[s_i, winners] * aw).sum(axis=1)
    loss = (nll_term * nll_weight + ce_term * ce_weight).mean()
    return loss, winners


# -- optimiser -------------------------------------------------------------------
class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, weight_decay=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        out = {"opt/step": np.array([self.t], dtype=np.int64)}
        for p, m, v in zip(self.params, self.m, self.v):
            out[f"opt/m/{p.name}"] = m.copy()
            out[f"opt/v/{p.name}"] = v.copy()
        return out

    def load_state(self, state: dict) -> None:
        if "opt/step" not in state:
            return
        self.t = int(state["opt/step"][0])
        for i, p in enumerate(self.params):
            self.m[i] = np.array(state[f"opt/m/{p.name}"], dtype=p.data.dtype)
            self.v[i] = np.array(state[f"opt/v/{p.name}"], dtype=p.data.dtype)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Step schedule: halve lr0 every ``lr_halving_period`` epochs."""
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halving_period)


def _freeze_scale_outputs(model: SceneMotion) -> None:
    """Zero the sigma/rho readout gradients (variance warm-up)."""
    cols = model.scale_columns()
    for p in (model.head.layers[-1].W, model.head.layers[-1].b):
        if p.grad is not None:
            p.grad[..., cols] = 0.0


# -- training loop ------------------------------------------------------------------
@dataclass
class FitResult:
    model: SceneMotion
    optimizer: AdamW
    curve: list = field(default_factory=list)  # (epoch, stage, loss, lr)
    steps: int = 0


def fit(scenarios, model: SceneMotion, cfg: TrainConfig, stage: str = "joint", *, epochs: int | None = None,
        start_epoch: int = 0, optimizer: AdamW | None = None, view_cfg: ViewConfig | None = None,
        max_steps: int | None = None, callback=None) -> FitResult:
    """Train ``model`` in place.

    stage "joint" uses scene-wide WTA, "marginal_finetune" per-agent WTA and
    expects ``model`` to hold joint-trained weights. ``callback(epoch, result)``
    runs after every epoch; returning True stops training.
    """
    if stage not in ("joint", "marginal_finetune"):
        raise ValueError(f"unknown stage {stage!r}")
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("fit needs at least one scenario")
    wta = "joint" if stage == "joint" else "marginal"
    if epochs is None:
        epochs = cfg.epochs_joint if stage == "joint" else cfg.epochs_marginal_finetune
    params = model.parameters()
    opt = optimizer or AdamW(params, weight_decay=cfg.weight_decay)
    cache = [prepare_batch([s], model.cfg, view_cfg) for s in scenarios]
    result = FitResult(model, opt)
    for epoch in range(start_epoch, start_epoch + epochs):
        lr = learning_rate(cfg, epoch)
        warm = stage == "joint" and epoch < cfg.scale_warmup_epochs
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(scenarios))
        losses, weights = [], []
        for b_idx, lo in enumerate(range(0, len(order), cfg.scenes_per_batch)):
            batch = concat_batches([cache[i] for i in order[lo : lo + cfg.scenes_per_batch]])
            model.zero_grad()
            out = model(batch)
            loss, _ = total_loss(out, batch.gt, batch.gt_valid, batch.agent_mask, wta, cfg.nll_weight, cfg.ce_weight)
            value = float(loss.data)
            if not math.isfinite(value):
                norms = {p.name: float(np.linalg.norm(p.data)) for p in params}
                worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b_idx}; largest parameter norms {worst}")
            T.backward(loss)
            if warm:
                _freeze_scale_outputs(model)
            clip_grad_norm(params, cfg.grad_clip)
            opt.step(lr)
            result.steps += 1
            losses.append(value)
            weights.append(batch.n_scenes)
            if max_steps is not None and result.steps >= max_steps:
                break
        result.curve.append((epoch, stage, float(np.average(losses, weights=weights)), lr))
        log.debug("epoch %d stage %s loss %.5f lr %.3g", epoch, stage, result.curve[-1][2], lr)
        if callback is not None and callback(epoch, result):
            break
        if max_steps is not None and result.steps >= max_steps:
            break
    return result


def predict_batch(model: SceneMotion, batch: SceneBatch) -> ForecastTensors:
    with T.no_grad():
        return model(batch)
