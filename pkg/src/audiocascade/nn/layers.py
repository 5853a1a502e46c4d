"""Layer kernels for the 1D U-Net: dense, conv, norms, attention, FiLM.

Layers register their parameters in a ParamStore under a dotted prefix,
so a whole model can be checkpointed and restored by name.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .optim import ParamStore

GROUPNORM_GROUPS = 8
NORM_EPS = 1e-5


def fan_in_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, zero_init: bool = False, bias: bool = True):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            w = fan_in_uniform(rng, (d_in, d_out), d_in)
        self.w = store.create(f"{name}.w", w)
        self.b = store.create(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        y = T.matmul(x, self.w)
        return y if self.b is None else T.add(y, self.b)


class Conv1d:
    def __init__(self, store: ParamStore, name: str, k: int, ch_in: int, ch_out: int,
                 rng: np.random.Generator, stride: int = 1, padding: str = "same",
                 zero_init: bool = False):
        self.stride = stride
        self.padding = padding
        if zero_init:
            w = np.zeros((k, ch_in, ch_out))
        else:
            w = fan_in_uniform(rng, (k, ch_in, ch_out), k * ch_in)
        self.w = store.create(f"{name}.w", w)
        self.b = store.create(f"{name}.b", np.zeros(ch_out))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)


class GroupNorm:
    """Group normalization over (length, channels/groups), per group."""

    def __init__(self, store: ParamStore, name: str, channels: int,
                 groups: int = GROUPNORM_GROUPS, eps: float = NORM_EPS):
        if channels % groups != 0:
            raise ValueError(f"channels {channels} not divisible by {groups} groups")
        self.groups = groups
        self.eps = eps
        self.g = store.create(f"{name}.g", np.ones(channels))
        self.b = store.create(f"{name}.b", np.zeros(channels))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        batch, length, ch = x.shape
        xg = T.reshape(x, (batch, length, self.groups, ch // self.groups))
        mu = T.reduce_mean(xg, axis=(1, 3), keepdims=True)
        centered = T.add(xg, T.mul(mu, -1.0))
        var = T.reduce_mean(T.mul(centered, centered), axis=(1, 3), keepdims=True)
        xn = T.div(centered, T.sqrt(T.add(var, self.eps)))
        xn = T.reshape(xn, (batch, length, ch))
        return T.add(T.mul(xn, self.g), self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = NORM_EPS):
        self.eps = eps
        self.g = store.create(f"{name}.g", np.ones(dim))
        self.b = store.create(f"{name}.b", np.zeros(dim))

    def __call__(self, x: T.Tensor) -> T.Tensor:
        mu = T.reduce_mean(x, axis=-1, keepdims=True)
        centered = T.add(x, T.mul(mu, -1.0))
        var = T.reduce_mean(T.mul(centered, centered), axis=-1, keepdims=True)
        xn = T.div(centered, T.sqrt(T.add(var, self.eps)))
        return T.add(T.mul(xn, self.g), self.b)


def multi_head_attention(q: T.Tensor, k: T.Tensor, v: T.Tensor, heads: int,
                         mask: np.ndarray | None = None) -> T.Tensor:
    """Scaled dot-product attention over already-projected q/k/v.

    q: [B, n, d]; k, v: [B, m, d]; mask: bool [B, m], True = attend.
    """
    b, n, d = q.shape
    m = k.shape[1]
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads
    qh = T.transpose(T.reshape(q, (b, n, heads, dh)), (0, 2, 1, 3))
    kh = T.transpose(T.reshape(k, (b, m, heads, dh)), (0, 2, 3, 1))
    vh = T.transpose(T.reshape(v, (b, m, heads, dh)), (0, 2, 1, 3))
    scores = T.mul(T.matmul(qh, kh), 1.0 / math.sqrt(dh))
    if mask is not None:
        bias = np.where(mask[:, None, None, :], 0.0, -1e9)
        scores = T.add(scores, bias)
    attn = T.softmax(scores, axis=-1)
    out = T.matmul(attn, vh)
    return T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, n, d))


class AttentionBlock:
    """Pre-norm multi-head attention plus the 2x-width feed-forward, both residual.

    Self-attention when no key/value source is given; cross-attention reads an
    external sequence (e.g. text embeddings) of dimension `kv_dim`.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, heads: int,
                 rng: np.random.Generator, kv_dim: int | None = None):
        self.heads = heads
        kv = kv_dim if kv_dim is not None else channels
        self.ln1 = LayerNorm(store, f"{name}.ln1", channels)
        self.wq = Dense(store, f"{name}.q", channels, channels, rng, bias=False)
        self.wk = Dense(store, f"{name}.k", kv, channels, rng, bias=False)
        self.wv = Dense(store, f"{name}.v", kv, channels, rng, bias=False)
        self.wo = Dense(store, f"{name}.o", channels, channels, rng, bias=False)
        self.ln2 = LayerNorm(store, f"{name}.ln2", channels)
        self.ff1 = Dense(store, f"{name}.ff1", channels, 2 * channels, rng)
        self.ff2 = Dense(store, f"{name}.ff2", 2 * channels, channels, rng)

    def __call__(self, x: T.Tensor, kv: T.Tensor | None = None,
                 kv_mask: np.ndarray | None = None,
                 gate: np.ndarray | None = None,
                 skip_attention: bool = False) -> T.Tensor:
        if not skip_attention:
            a = self.ln1(x)
            src = a if kv is None else kv
            h = multi_head_attention(self.wq(a), self.wk(src), self.wv(src),
                                     self.heads, mask=kv_mask)
            h = self.wo(h)
            if gate is not None:
                h = T.mul(h, gate[:, None, None])
            x = T.add(x, h)
        f = self.ln2(x)
        return T.add(x, self.ff2(T.silu(self.ff1(f))))


class CombineEmbedding:
    """FiLM conditioning: a single vector scales and shifts a whole sequence.

    out[t, c] = seq[t, c] * (1 + scale[c]) + bias[c], where (scale, bias) come
    from a zero-initialized affine map of the embedding, so the layer starts
    as the identity.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, emb_dim: int,
                 rng: np.random.Generator):
        self.channels = channels
        self.affine = Dense(store, f"{name}.affine", emb_dim, 2 * channels, rng,
                            zero_init=True)

    def __call__(self, seq: T.Tensor, emb: T.Tensor) -> T.Tensor:
        if emb.shape[-1] != self.affine.w.shape[0]:
            raise ValueError("embedding dimension mismatch")
        sb = self.affine(emb)  # [B, 2C]
        scale = T.reshape(sb[:, :self.channels], (emb.shape[0], 1, self.channels))
        bias = T.reshape(sb[:, self.channels:], (emb.shape[0], 1, self.channels))
        return T.add(T.mul(seq, T.add(scale, 1.0)), bias)
