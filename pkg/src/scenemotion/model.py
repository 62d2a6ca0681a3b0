"""Scene-wide motion forecasting network.

Pipeline per batch of scenes:

1. ``encode_local``: polyline tokens of every agent-centric view -> MLP ->
   + learned absolute positional embeddings.
2. ``reduce``: reduction decoder; learned RED tokens cross-attend into the
   variable-length view and come out as a fixed-size embedding E_i.
3. ``global_token``: linear projection of the view pose (cos, sin, tx, ty).
4. ``assemble_scene``: [E_i ; G_i] per agent, agents concatenated per scene.
5. ``latent_context``: self-attention blocks over all agents' tokens.
6. ``decode_motion``: learned anchors + refined G_i query the scene
   embedding; an MLP head emits Gaussian waypoint parameters per mode.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .forecast import Forecast
from .nn import Attention, FeedForward, LayerNorm, Linear, MLP, Module
from .scenario import TrafficScenario, rotation
from .tensor import Parameter, Tensor, no_grad
from .views import ViewConfig, ViewLayout, batch_views, build_view

LOG_SIGMA_MIN, LOG_SIGMA_MAX = -5.0, 5.0
RHO_SCALE = 0.99


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_red: int = 16
    n_reduction_blocks: int = 4
    n_context_blocks: int = 6
    n_decoder_blocks: int = 1
    n_modes: int = 6
    n_heads: int = 4
    horizon: int = 80
    ff_mult: int = 2
    max_tokens: int = 256
    n_past: int = 11
    max_segment_nodes: int = 10
    scene_frame: str = "canonical"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_modes < 1 or self.horizon < 1:
            raise ValueError("n_modes and horizon must be >= 1")
        if self.scene_frame not in ("canonical", "global"):
            raise ValueError(f"unknown scene_frame {self.scene_frame!r}")

    @property
    def in_dim(self) -> int:
        return ViewLayout(self.n_past, self.max_segment_nodes).width


@dataclass
class SceneBatch:
    """Model inputs for S scenes with up to N focal agents each.

    Agent-level arrays are flattened scene-major: row s * N + i.
    """

    scenario_ids: list
    focal_ids: list
    features: np.ndarray  # (S*N, L, W)
    token_mask: np.ndarray  # (S*N, L)
    agent_mask: np.ndarray  # (S, N)
    poses: np.ndarray  # (S*N, 3) local -> global
    pose_inputs: np.ndarray  # (S*N, 4) (cos, sin, tx, ty) in the scene reference frame
    gt: np.ndarray | None = None  # (S, N, T, 2) local frames
    gt_valid: np.ndarray | None = None  # (S, N, T)
    classes: list = field(default_factory=list)

    @property
    def n_scenes(self) -> int:
        return self.agent_mask.shape[0]

    @property
    def n_agents(self) -> int:
        return self.agent_mask.shape[1]


def scene_reference(poses: np.ndarray, mode: str = "canonical"):
    """(phi, origin) of the common scene frame for agent poses (N, 3).

    "canonical": centroid of agent positions, circular-mean heading. Both are
    permutation invariant and move with the scene under rigid transforms.
    "global": the scenario's own frame.
    """
    if mode == "global" or len(poses) == 0:
        return 0.0, np.zeros(2)
    c, s = np.cos(poses[:, 0]).sum(), np.sin(poses[:, 0]).sum()
    phi = math.atan2(s, c) if math.hypot(c, s) > 1e-9 else 0.0
    return phi, poses[:, 1:3].mean(axis=0)


def pose_features(poses: np.ndarray, mode: str = "canonical") -> np.ndarray:
    """(cos, sin, tx, ty) of each agent pose relative to the scene frame."""
    phi, origin = scene_reference(poses, mode)
    rel_t = (poses[:, 1:3] - origin) @ rotation(-phi).T
    rel_h = poses[:, 0] - phi
    return np.column_stack([np.cos(rel_h), np.sin(rel_h), rel_t])


def local_targets(scenario: TrafficScenario, focal_ids, poses, horizon: int):
    lo = scenario.n_past
    gt = np.zeros((len(focal_ids), horizon, 2))
    valid = np.zeros((len(focal_ids), horizon), dtype=bool)
    for i, fid in enumerate(focal_ids):
        a = scenario.agent(fid)
        n = min(horizon, a.states.shape[0] - lo)
        theta, tx, ty = poses[i]
        v = a.valid[lo : lo + n]
        loc = (a.positions[lo : lo + n] - (tx, ty)) @ rotation(theta)
        gt[i, :n] = np.where(v[:, None], loc, 0.0)
        valid[i, :n] = v
    return gt, valid


def prepare_batch(scenarios, cfg: ModelConfig, view_cfg: ViewConfig | None = None,
                  focal_ids=None, with_targets: bool = True) -> SceneBatch:
    """Build views for the focal agents of each scenario and pad to a batch."""
    view_cfg = view_cfg or ViewConfig(max_segment_nodes=cfg.max_segment_nodes)
    scenarios = list(scenarios)
    ids_per_scene = [list(focal_ids[k] if focal_ids is not None else s.focal_ids) for k, s in enumerate(scenarios)]
    S = len(scenarios)
    N = max(len(ids) for ids in ids_per_scene)
    views, agent_mask = [], np.zeros((S, N), dtype=bool)
    pose_inputs = np.zeros((S * N, 4))
    empty = None
    for k, (s, ids) in enumerate(zip(scenarios, ids_per_scene)):
        sv = [build_view(s, fid, view_cfg) for fid in ids]
        agent_mask[k, : len(sv)] = True
        p = np.array([v.pose for v in sv])
        pose_inputs[k * N : k * N + len(sv)] = pose_features(p, cfg.scene_frame)
        views.extend(sv)
        if len(sv) < N:
            empty = empty or _empty_view(sv[0])
            views.extend([empty] * (N - len(sv)))
    feats, mask, _, poses = batch_views(views)
    if feats.shape[-1] != cfg.in_dim:
        raise ValueError(f"view width {feats.shape[-1]} does not match model input width {cfg.in_dim}")
    batch = SceneBatch([s.scenario_id for s in scenarios], ids_per_scene, feats, mask, agent_mask, poses, pose_inputs)
    batch.classes = [[s.agent(i).agent_class for i in ids] for s, ids in zip(scenarios, ids_per_scene)]
    if with_targets:
        gt = np.zeros((S, N, cfg.horizon, 2))
        gv = np.zeros((S, N, cfg.horizon), dtype=bool)
        for k, (s, ids) in enumerate(zip(scenarios, ids_per_scene)):
            g, v = local_targets(s, ids, poses[k * N : k * N + len(ids)], cfg.horizon)
            gt[k, : len(ids)], gv[k, : len(ids)] = g, v
        batch.gt, batch.gt_valid = gt, gv
    return batch


def _empty_view(like):
    from .views import AgentCentricView

    return AgentCentricView("", (0.0, 0.0, 0.0), np.zeros((0, like.features.shape[1])), np.zeros(0, dtype=np.int64), ())


def concat_batches(batches) -> SceneBatch:
    """Merge prepared batches (re-padding tokens and agents)."""
    batches = list(batches)
    if len(batches) == 1:
        return batches[0]
    N = max(b.n_agents for b in batches)
    L = max(b.features.shape[1] for b in batches)
    W = batches[0].features.shape[2]
    Tn = batches[0].gt.shape[2] if batches[0].gt is not None else 0
    feats, tmask, amask, poses, pin, gts, gvs = [], [], [], [], [], [], []
    for b in batches:
        S, n = b.n_scenes, b.n_agents
        f = np.zeros((S, N, L, W))
        f[:, :n, : b.features.shape[1]] = b.features.reshape(S, n, -1, W)
        m = np.zeros((S, N, L), dtype=bool)
        m[:, :n, : b.features.shape[1]] = b.token_mask.reshape(S, n, -1)
        am = np.zeros((S, N), dtype=bool)
        am[:, :n] = b.agent_mask
        p = np.zeros((S, N, 3))
        p[:, :n] = b.poses.reshape(S, n, 3)
        pi = np.zeros((S, N, 4))
        pi[:, :n] = b.pose_inputs.reshape(S, n, 4)
        feats.append(f.reshape(S * N, L, W))
        tmask.append(m.reshape(S * N, L))
        amask.append(am)
        poses.append(p.reshape(S * N, 3))
        pin.append(pi.reshape(S * N, 4))
        if b.gt is not None:
            g = np.zeros((S, N, Tn, 2))
            g[:, :n] = b.gt
            v = np.zeros((S, N, Tn), dtype=bool)
            v[:, :n] = b.gt_valid
            gts.append(g)
            gvs.append(v)
    out = SceneBatch(
        sum((b.scenario_ids for b in batches), []), sum((b.focal_ids for b in batches), []),
        np.concatenate(feats), np.concatenate(tmask), np.concatenate(amask), np.concatenate(poses), np.concatenate(pin),
    )
    out.classes = sum((b.classes for b in batches), [])
    if gts:
        out.gt, out.gt_valid = np.concatenate(gts), np.concatenate(gvs)
    return out


# -- blocks ------------------------------------------------------------------
class ReductionBlock(Module):
    """Self-attention within the view, then RED tokens cross-attend into it, then FeedForward on RED."""

    def __init__(self, d, n_heads, hidden, rng):
        self.ln_view = LayerNorm(d)
        self.self_attn = Attention(d, n_heads, rng)
        self.ln_red = LayerNorm(d)
        self.ln_kv = LayerNorm(d)
        self.cross_attn = Attention(d, n_heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, hidden, rng)

    def __call__(self, v, r, mask):
        h = self.ln_view(v)
        v = v + self.self_attn(h, h, mask)
        r = r + self.cross_attn(self.ln_red(r), self.ln_kv(v), mask)
        r = r + self.ff(self.ln_ff(r))
        return v, r


class ContextBlock(Module):
    def __init__(self, d, n_heads, hidden, rng):
        self.ln_attn = LayerNorm(d)
        self.attn = Attention(d, n_heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, hidden, rng)

    def __call__(self, x, mask):
        h = self.ln_attn(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.ln_ff(x))


class DecoderBlock(Module):
    def __init__(self, d, n_heads, hidden, rng):
        self.ln_q = LayerNorm(d)
        self.ln_kv = LayerNorm(d)
        self.cross_attn = Attention(d, n_heads, rng)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, hidden, rng)

    def __call__(self, q, kv, mask):
        q = q + self.cross_attn(self.ln_q(q), self.ln_kv(kv), mask)
        return q + self.ff(self.ln_ff(q))


@dataclass
class ForecastTensors:
    mu: Tensor  # (S, K, N, T, 2)
    log_sigma: Tensor  # (S, K, N, T, 2)
    rho: Tensor  # (S, K, N, T)
    mode_logits: Tensor  # (S, K)


class SceneMotion(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d, hidden = cfg.d_model, cfg.ff_mult * cfg.d_model
        self.encoder = MLP([cfg.in_dim, d, d, d], rng)
        self.pos_emb = Parameter(rng.normal(0.0, 0.1, (cfg.max_tokens, d)))
        self.red = Parameter(rng.normal(0.0, 1.0, (cfg.n_red, d)))
        self.reduction = [ReductionBlock(d, cfg.n_heads, hidden, rng) for _ in range(cfg.n_reduction_blocks)]
        self.global_proj = Linear(4, d, rng, std=0.1)
        self.context = [ContextBlock(d, cfg.n_heads, hidden, rng) for _ in range(cfg.n_context_blocks)]
        self.anchors = Parameter(rng.normal(0.0, 1.0, (cfg.n_modes, d)))
        self.decoder = [DecoderBlock(d, cfg.n_heads, hidden, rng) for _ in range(cfg.n_decoder_blocks)]
        self.ln_out = LayerNorm(d)
        self.head = MLP([d, d, cfg.horizon * 5], rng)
        self.logit_head = Linear(d, 1, rng)
        # sigma/rho readout starts at zero: sigma = 1, rho = 0 until trained
        for p in (self.head.layers[-1].W, self.head.layers[-1].b):
            p.data[..., self.scale_columns()] = 0.0
        for name, p in self.named_parameters():
            p.name = name

    def scale_columns(self) -> np.ndarray:
        """Boolean mask over the head's output units that feed sigma and rho."""
        return np.tile(np.array([False, False, True, True, True]), self.cfg.horizon)

    # -- stages --------------------------------------------------------------
    def encode_local(self, features, token_mask) -> Tensor:
        L = features.shape[1]
        if L > self.cfg.max_tokens:
            raise CapacityError(f"view has {L} tokens, positional table holds {self.cfg.max_tokens}")
        return self.encoder(features) + self.pos_emb[:L]

    def reduce(self, tokens: Tensor, token_mask) -> Tensor:
        B = tokens.shape[0]
        r = self.red.reshape(1, *self.red.shape) * np.ones((B, 1, 1))
        v = tokens
        for blk in self.reduction:
            v, r = blk(v, r, token_mask)
        return r

    def global_token(self, pose_inputs) -> Tensor:
        return self.global_proj(pose_inputs)

    def assemble_scene(self, E: Tensor, G: Tensor, n_scenes: int) -> Tensor:
        """(S*N, R, d) and (S*N, d) -> (S, N*(R+1), d), agent blocks in focal order, G_i last in each block."""
        B, R, d = E.shape
        if G.shape[0] != B or B % n_scenes:
            raise ValueError(f"assemble_scene: {B} embeddings, {G.shape[0]} global tokens, {n_scenes} scenes")
        blocks = T.concat([E, G.reshape(B, 1, d)], axis=1)
        return blocks.reshape(n_scenes, (B // n_scenes) * (R + 1), d)

    def disassemble_scene(self, x: Tensor):
        """Inverse of :meth:`assemble_scene`: (S, N*(R+1), d) -> E (S*N, R, d), G (S*N, d)."""
        S, L, d = x.shape
        R = self.cfg.n_red
        blocks = x.reshape(S * (L // (R + 1)), R + 1, d)
        return blocks[:, :R, :], blocks[:, R, :]

    def latent_context(self, x: Tensor, key_mask) -> Tensor:
        for blk in self.context:
            x = blk(x, key_mask)
        return x

    def decode_motion(self, x: Tensor, key_mask, agent_mask) -> ForecastTensors:
        cfg = self.cfg
        S, N = agent_mask.shape
        R, d, K, Tn = cfg.n_red, cfg.d_model, cfg.n_modes, cfg.horizon
        g_ref = x.reshape(S, N, R + 1, d)[:, :, R, :]
        q = self.anchors.reshape(1, K, 1, d) + g_ref.reshape(S, 1, N, d)
        q = q.reshape(S, K * N, d)
        for blk in self.decoder:
            q = blk(q, x, key_mask)
        out = self.ln_out(q)
        raw = self.head(out).reshape(S, K, N, Tn, 5)
        mu = raw[..., 0:2]
        log_sigma = T.clip(raw[..., 2:4], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        rho = T.tanh(raw[..., 4]) * RHO_SCALE
        am = agent_mask.astype(float)
        weights = am / np.maximum(am.sum(axis=1, keepdims=True), 1.0)
        pooled = (out.reshape(S, K, N, d) * weights[:, None, :, None]).sum(axis=2)
        logits = self.logit_head(pooled).reshape(S, K)
        return ForecastTensors(mu, log_sigma, rho, logits)

    def forward(self, batch: SceneBatch, return_parts: bool = False):
        S, N = batch.agent_mask.shape
        tokens = self.encode_local(batch.features, batch.token_mask)
        E = self.reduce(tokens, batch.token_mask)
        G = self.global_token(batch.pose_inputs)
        x = self.assemble_scene(E, G, S)
        key_mask = np.repeat(batch.agent_mask, self.cfg.n_red + 1, axis=1)
        x = self.latent_context(x, key_mask)
        out = self.decode_motion(x, key_mask, batch.agent_mask)
        if return_parts:
            return out, {"E": E, "G": G, "scene": x}
        return out

    __call__ = forward

    # -- inference -------------------------------------------------------------
    def to_forecasts(self, batch: SceneBatch, out: ForecastTensors) -> list[Forecast]:
        mu, ls, rho, logits = out.mu.data, out.log_sigma.data, out.rho.data, out.mode_logits.data
        params = np.concatenate([mu, np.exp(ls), rho[..., None]], axis=-1)
        N = batch.n_agents
        res = []
        for k, sid in enumerate(batch.scenario_ids):
            n = int(batch.agent_mask[k].sum())
            res.append(Forecast(sid, tuple(batch.focal_ids[k]), params[k, :, :n].copy(), logits[k].copy(),
                                batch.poses[k * N : k * N + n].copy()))
        return res

    def predict(self, scenarios, view_cfg: ViewConfig | None = None, batch_size: int = 8, focal_ids=None) -> list[Forecast]:
        scenarios = list(scenarios)
        out = []
        with no_grad():
            for i in range(0, len(scenarios), batch_size):
                chunk = scenarios[i : i + batch_size]
                fids = None if focal_ids is None else focal_ids[i : i + batch_size]
                batch = prepare_batch(chunk, self.cfg, view_cfg, focal_ids=fids, with_targets=False)
                out.extend(self.to_forecasts(batch, self.forward(batch)))
        return out

    # -- persistence -------------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.data.dtype).copy()


def save_model(path, model: SceneMotion, extra_tensors: dict | None = None, meta: dict | None = None) -> None:
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    tensors.update(extra_tensors or {})
    T.save_tensors(path, tensors, {"model_config": asdict(model.cfg), **(meta or {})})


def load_model(path):
    """Returns (model, extra tensors, metadata)."""
    tensors, meta = T.load_tensors(path)
    cfg = ModelConfig(**meta["model_config"])
    model = SceneMotion(cfg)
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
    extra = {k: v for k, v in tensors.items() if not k.startswith("param/")}
    return model, extra, meta
