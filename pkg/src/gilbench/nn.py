"""Layers used by the two sequence models.

All layers operate on batched ``[B, T, d]`` grids.  Attention uses a post-norm
residual arrangement: ``LN(x + Dropout(Sublayer(x)))``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, ValueGrid


class ConfigError(ValueError):
    """Invalid layer or model configuration."""


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LinearLayer:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str, bias: bool = True):
        self.weight = Parameter(uniform_init(rng, (n_in, n_out), n_in), f"{name}.weight")
        self.bias = Parameter(uniform_init(rng, (n_out,), n_in), f"{name}.bias") if bias else None

    def __call__(self, x) -> ValueGrid:
        y = ad.matmul(x, self.weight)
        return ad.add(y, self.bias) if self.bias is not None else y

    def parameters(self) -> list[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


class ElmanCell:
    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, name: str = "cell"):
        # the layer sees [x, h] concatenated, so one bound covers all three tensors
        fan_in = n_in + n_hidden
        self.w_xh = Parameter(uniform_init(rng, (n_in, n_hidden), fan_in), f"{name}.w_xh")
        self.w_hh = Parameter(uniform_init(rng, (n_hidden, n_hidden), fan_in), f"{name}.w_hh")
        self.b_h = Parameter(uniform_init(rng, (n_hidden,), fan_in), f"{name}.b_h")

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_xh, self.w_hh, self.b_h]


def elman_step(cell: ElmanCell, h, x) -> ValueGrid:
    """One recurrence step ``tanh(x W_xh + h W_hh + b)`` built from primitives."""
    h, x = ad._as_grid(h), ad._as_grid(x)
    if h.shape[-1] != cell.hidden or x.shape[-1] != cell.w_xh.shape[0]:
        raise ShapeError(f"elman_step: h {h.shape}, x {x.shape} vs cell "
                         f"{cell.w_xh.shape}/{cell.w_hh.shape}")
    pre = ad.add(ad.add(ad.matmul(x, cell.w_xh), ad.matmul(h, cell.w_hh)), cell.b_h)
    return ad.tanh(pre)


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos."""
    if d_model <= 0 or d_model % 2:
        raise ConfigError(f"d_model must be a positive even integer, got {d_model}")
    if max_len < 1:
        raise ConfigError("max_len must be positive")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, two_i / d_model)
    table = np.empty((max_len, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def causal_mask(t: int) -> np.ndarray:
    """Boolean [t, t]; entry (q, k) is True iff k <= q."""
    if t < 1:
        raise ConfigError("mask length must be >= 1")
    return np.tril(np.ones((t, t), dtype=bool))


class Mode(str, enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class DropoutSpec:
    p: float = 0.0
    mode: Mode = Mode.EVAL

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.p}")

    @property
    def active(self) -> bool:
        return self.mode is Mode.TRAIN and self.p > 0.0


def dropout(x, spec: DropoutSpec, rng: np.random.Generator | None) -> ValueGrid:
    """Inverted dropout in train mode, identity otherwise."""
    x = ad._as_grid(x)
    if not spec.active:
        return x
    if rng is None:
        raise ConfigError("active dropout needs a random generator")
    keep = (rng.random(x.shape) >= spec.p) / (1.0 - spec.p)
    return ad.mul(x, keep)


class AttentionBlock:
    """One decoder layer: masked multi-head self-attention then feed-forward."""

    def __init__(self, d_model: int, heads: int, d_ff: int, rng: np.random.Generator, name: str = "block0"):
        if d_model % heads:
            raise ConfigError(f"heads={heads} must divide d_model={d_model}")
        self.d_model, self.heads, self.d_ff = d_model, heads, d_ff
        self.w_q, self.w_k, self.w_v, self.w_o = (
            Parameter(uniform_init(rng, (d_model, d_model), d_model), f"{name}.w_{s}")
            for s in "qkvo"
        )
        self.ln1_gain = Parameter(np.ones(d_model), f"{name}.ln1.gain")
        self.ln1_bias = Parameter(np.zeros(d_model), f"{name}.ln1.bias")
        self.ff1 = LinearLayer(d_model, d_ff, rng, f"{name}.ff1")
        self.ff2 = LinearLayer(d_ff, d_model, rng, f"{name}.ff2")
        self.ln2_gain = Parameter(np.ones(d_model), f"{name}.ln2.gain")
        self.ln2_bias = Parameter(np.zeros(d_model), f"{name}.ln2.bias")

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.w_k, self.w_v, self.w_o, self.ln1_gain, self.ln1_bias,
                *self.ff1.parameters(), *self.ff2.parameters(), self.ln2_gain, self.ln2_bias]


def _split_heads(x: ValueGrid, heads: int) -> ValueGrid:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: ValueGrid) -> ValueGrid:
    b, h, t, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def attention_weights(q: ValueGrid, k: ValueGrid, mask: np.ndarray) -> ValueGrid:
    """Per-head ``softmax(mask_fill(QK^T / sqrt(d_head)))`` from primitives."""
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(q.shape[-1]))
    return ad.softmax_rows(ad.masked_fill(scores, mask))


def mha_forward(x, block: AttentionBlock, mask: np.ndarray, drop: DropoutSpec,
                rng: np.random.Generator | None, fused: bool = True) -> ValueGrid:
    """Attention sublayer ``LN(x + Dropout(MHA(x) W_o))`` on x [B, T, d_model].

    ``fused=True`` runs the causal core through a single kernel node; it is only
    valid for the standard lower-triangular mask.  ``fused=False`` composes the
    primitives and honours any mask.
    """
    x = ad._as_grid(x)
    if x.data.ndim != 3 or x.shape[2] != block.d_model:
        raise ShapeError(f"mha_forward: input {x.shape} vs d_model {block.d_model}")
    t = x.shape[1]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t, t):
        raise ShapeError(f"mha_forward: mask {mask.shape} for sequence length {t}")
    q = _split_heads(ad.matmul(x, block.w_q), block.heads)
    k = _split_heads(ad.matmul(x, block.w_k), block.heads)
    v = _split_heads(ad.matmul(x, block.w_v), block.heads)
    if fused and np.array_equal(mask, causal_mask(t)):
        ctx = ad.causal_attention(q, k, v)
    else:
        ctx = ad.matmul(attention_weights(q, k, mask), v)
    out = ad.matmul(_merge_heads(ctx), block.w_o)
    out = dropout(out, drop, rng)
    return ad.layer_norm(ad.add(x, out), block.ln1_gain, block.ln1_bias)


def feed_forward(x, block: AttentionBlock, drop: DropoutSpec, rng: np.random.Generator | None) -> ValueGrid:
    """Position-wise sublayer ``LN(x + Dropout(relu(x W1 + b1) W2 + b2))``."""
    x = ad._as_grid(x)
    if x.shape[-1] != block.d_model:
        raise ShapeError(f"feed_forward: input {x.shape} vs d_model {block.d_model}")
    hidden = ad.relu(block.ff1(x))
    out = dropout(block.ff2(hidden), drop, rng)
    return ad.layer_norm(ad.add(x, out), block.ln2_gain, block.ln2_bias)
