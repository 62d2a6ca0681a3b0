"""Neural building blocks on top of :mod:`scenemotion.tensor`."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


# -- functional ops --------------------------------------------------------
def linear(x, W, b=None) -> Tensor:
    """Affine map ``x @ W + b`` over the last axis. ``W`` is (in, out)."""
    x = T.as_tensor(x)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    lead = x.shape[:-1]
    y = T.matmul(x.reshape(-1, x.shape[-1]), W)
    if b is not None:
        y = y + b
    return y.reshape(*lead, W.shape[1])


def mlp(x, layers) -> Tensor:
    """Stack of (W, b) affine layers with ReLU between them, none after the last."""
    for i, (W, b) in enumerate(layers):
        x = linear(x, W, b)
        if i < len(layers) - 1:
            x = T.relu(x)
    return x


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, gain, bias, eps)


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    return T.softmax(x, axis=axis, mask=mask)


def cross_entropy(logits, target) -> Tensor:
    """``-log softmax(logits)[target]`` along the last axis.

    ``target`` is an int (1-D logits) or an int array matching the leading
    shape; the result has that leading shape.
    """
    logits = T.as_tensor(logits)
    logp = T.log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return -logp[int(target)]
    target = np.asarray(target)
    lead = np.indices(target.shape, sparse=True)
    return -logp[tuple(lead) + (target,)]


def multi_head_attention(q_src, kv_src, mask, n_heads: int, wq, bq, wk, bk, wv, bv, wo, bo) -> Tensor:
    """Scaled dot-product attention with ``n_heads`` heads.

    q_src: (B, Lq, d), kv_src: (B, Lk, d), mask: bool (B, Lk) marking valid
    keys or None. Queries with no valid key produce zero output.
    """
    q_src, kv_src = T.as_tensor(q_src), T.as_tensor(kv_src)
    B, Lq, d = q_src.shape
    Lk = kv_src.shape[1]
    if d % n_heads:
        raise ValueError(f"model dim {d} not divisible by {n_heads} heads")
    dh = d // n_heads

    def heads(x, L):
        return T.transpose(x.reshape(B, L, n_heads, dh), (0, 2, 1, 3))

    q = heads(linear(q_src, wq, bq) * (1.0 / math.sqrt(dh)), Lq)
    k = heads(linear(kv_src, wk, bk), Lk)  # bk may be None
    v = heads(linear(kv_src, wv, bv), Lk)
    scores = T.matmul(q, T.swapaxes(k, -1, -2))
    m = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
    w = T.softmax(scores, axis=-1, mask=m)
    out = T.transpose(T.matmul(w, v), (0, 2, 1, 3)).reshape(B, Lq, d)
    out = linear(out, wo, bo)
    if mask is not None:
        has_key = np.asarray(mask, dtype=bool).any(axis=-1)
        if not has_key.all():
            out = out * has_key[:, None, None].astype(out.data.dtype)
    return out


# -- modules ---------------------------------------------------------------
class Module:
    """Parameter container; parameters are discovered from attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _init(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, std: float | None = None, bias: bool = True):
        self.W = Parameter(_init(rng, (n_in, n_out), std if std is not None else 1.0 / math.sqrt(n_in)))
        self.b = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        return linear(x, self.W, self.b)


class MLP(Module):
    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        return mlp(x, [(l.W, l.b) for l in self.layers])


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)


class Attention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"d_model {d} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        # a key bias only adds a per-query constant to the scores, which the
        # softmax cancels; it would be a parameter with identically zero gradient
        self.k = Linear(d, d, rng, bias=False)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def __call__(self, q_src, kv_src, mask=None):
        return multi_head_attention(
            q_src, kv_src, mask, self.n_heads,
            self.q.W, self.q.b, self.k.W, self.k.b, self.v.W, self.v.b, self.o.W, self.o.b,
        )


class FeedForward(Module):
    def __init__(self, d: int, hidden: int, rng: np.random.Generator):
        self.up = Linear(d, hidden, rng)
        self.down = Linear(hidden, d, rng)

    def __call__(self, x):
        return self.down(T.relu(self.up(x)))
