"""Dense float64 arrays with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded; calling
``tape.backward(loss)`` replays them in reverse and accumulates gradients into
every reachable :class:`Parameter`.  Outside a tape the same functions are
plain numpy forward computations, which is what rollout uses.
"""
from __future__ import annotations

import json
import os
import threading
import zipfile
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

MASK_VALUE = -1e30
LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DegenerateMaskError(ValueError):
    """A softmax row had every entry masked out."""


class ValueGrid:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"ValueGrid(shape={self.shape})"


class Parameter(ValueGrid):
    """Trainable grid carrying its gradient and Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives; one reverse sweep per tape."""

    def __init__(self):
        self.ops: list[tuple[ValueGrid, tuple[ValueGrid, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def record(self, out: ValueGrid, inputs: tuple[ValueGrid, ...], backward: Callable) -> None:
        self.ops.append((out, inputs, backward))

    def backward(self, loss: ValueGrid) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, inputs, fn in reversed(self.ops):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += g
                elif inp.grad is None:
                    # backward rules may hand the same array to several inputs,
                    # so intermediate gradients are never updated in place
                    inp.grad = g
                else:
                    inp.grad = inp.grad + g
        # drop intermediate buffers so a second sweep cannot double count
        for out, _, _ in self.ops:
            if not isinstance(out, Parameter):
                out.grad = None


def _as_grid(x) -> ValueGrid:
    return x if isinstance(x, ValueGrid) else ValueGrid(x)


def _emit(data: np.ndarray, inputs: tuple[ValueGrid, ...], backward: Callable) -> ValueGrid:
    tape = _active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out = ValueGrid(data, requires_grad=True)
        tape.record(out, inputs, backward)
        return out
    return ValueGrid(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: ValueGrid, b: ValueGrid, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a, b) -> ValueGrid:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = _as_grid(a), _as_grid(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if bd.ndim == 1:
            ga = np.multiply.outer(g, bd) if a.requires_grad else None
            gb = _unbroadcast(np.einsum("...i,...->...i", ad, g), bd.shape) if b.requires_grad else None
            return ga, gb
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            elif bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit(ad @ bd, (a, b), backward)


def add(a, b) -> ValueGrid:
    a, b = _as_grid(a), _as_grid(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> ValueGrid:
    a, b = _as_grid(a), _as_grid(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> ValueGrid:
    a = _as_grid(a)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> ValueGrid:
    a = _as_grid(a)
    y = np.tanh(a.data)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> ValueGrid:
    a = _as_grid(a)
    keep = a.data > 0
    return _emit(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def softmax_rows(x) -> ValueGrid:
    """Max-subtracted softmax over the last axis."""
    x = _as_grid(x)
    top = x.data.max(axis=-1, keepdims=True)
    if np.any(top <= MASK_VALUE * 0.5):
        raise DegenerateMaskError("softmax row has every entry masked")
    e = np.exp(x.data - top)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit(s, (x,), backward)


def layer_norm(x, gain, bias, eps: float = LAYER_NORM_EPS) -> ValueGrid:
    """Normalise each row over the last axis, then apply gain and bias."""
    x, gain, bias = _as_grid(x), _as_grid(gain), _as_grid(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, g.shape[-1])
        return dx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return _emit(xhat * gd + bias.data, (x, gain, bias), backward)


def masked_fill(x, allowed: np.ndarray) -> ValueGrid:
    """Add MASK_VALUE wherever ``allowed`` is False (broadcast over leading axes)."""
    x = _as_grid(x)
    allowed = np.asarray(allowed, dtype=bool)
    if x.shape[-allowed.ndim:] != allowed.shape:
        raise ShapeError(f"masked_fill: mask {allowed.shape} does not match scores {x.shape}")
    return _emit(x.data + np.where(allowed, 0.0, MASK_VALUE), (x,), lambda g: (g,))


def transpose(x, axes: Sequence[int] | None = None) -> ValueGrid:
    x = _as_grid(x)
    axes = tuple(range(x.data.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x, shape: Sequence[int]) -> ValueGrid:
    x = _as_grid(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit(y, (x,), lambda g: (g.reshape(old),))


def slice_rows(x, start: int, stop: int) -> ValueGrid:
    x = _as_grid(x)
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit(x.data[start:stop], (x,), backward)


def concat_rows(items: Sequence[ValueGrid]) -> ValueGrid:
    items = tuple(_as_grid(i) for i in items)
    tails = {i.shape[1:] for i in items}
    if len(tails) != 1:
        raise ShapeError(f"concat_rows: trailing shapes differ {sorted(tails)}")
    bounds = np.cumsum([0] + [i.shape[0] for i in items])

    def backward(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(items)))

    return _emit(np.concatenate([i.data for i in items], axis=0), items, backward)


def stack_rows(items: Sequence[ValueGrid]) -> ValueGrid:
    items = tuple(_as_grid(i) for i in items)
    if len({i.shape for i in items}) != 1:
        raise ShapeError("stack_rows: all items must share one shape")
    return _emit(np.stack([i.data for i in items]), items, lambda g: tuple(g))


def sum_all(x) -> ValueGrid:
    x = _as_grid(x)
    shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def mean_square(pred, target) -> ValueGrid:
    """Mean over every scalar component of (pred - target)^2; target is constant."""
    pred = _as_grid(pred)
    target = np.asarray(target.data if isinstance(target, ValueGrid) else target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mean_square: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _emit(np.array(np.mean(diff * diff)), (pred,), lambda g: (g * 2.0 * diff / n,))


def elman_sequence(x, h0, w_xh, w_hh, b) -> ValueGrid:
    """Run an Elman layer over ``x`` [B,T,I] from ``h0`` [B,H]; returns states [B,T,H].

    Fused single-node equivalent of T chained ``tanh(x W_xh + h W_hh + b)``
    steps, backed by the BPTT kernel.
    """
    x, h0, w_xh, w_hh, b = (_as_grid(v) for v in (x, h0, w_xh, w_hh, b))
    n_in, n_hid = w_xh.shape
    if x.data.ndim != 3 or x.shape[2] != n_in or h0.shape != (x.shape[0], n_hid) \
            or w_hh.shape != (n_hid, n_hid) or b.shape != (n_hid,):
        raise ShapeError(f"elman_sequence: x {x.shape}, h0 {h0.shape}, w_xh {w_xh.shape}, "
                         f"w_hh {w_hh.shape}, b {b.shape}")
    xd = np.ascontiguousarray(x.data)
    hd = np.ascontiguousarray(h0.data)
    hs = kernels.elman_forward(xd, hd, w_xh.data, w_hh.data, b.data)

    def backward(g):
        return kernels.elman_backward(xd, hd, hs, w_xh.data, w_hh.data, np.ascontiguousarray(g))

    return _emit(hs, (x, h0, w_xh, w_hh, b), backward)


def causal_attention(q, k, v) -> ValueGrid:
    """Fused causal ``softmax(QK^T / sqrt(D)) V`` over [B,H,T,D] blocks."""
    q, k, v = _as_grid(q), _as_grid(k), _as_grid(v)
    if q.data.ndim != 4 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"causal_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    qd, kd, vd = (np.ascontiguousarray(t.data) for t in (q, k, v))
    c = 1.0 / np.sqrt(q.shape[-1])
    out, probs = kernels.causal_attention_forward(qd, kd, vd, c)

    def backward(g):
        return kernels.causal_attention_backward(qd, kd, vd, probs, c, np.ascontiguousarray(g))

    return _emit(out, (q, k, v), backward)


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------

def grad_check(f: Callable[[], ValueGrid], params: Iterable[Parameter], h: float = 1e-5) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` must rebuild the scalar loss from the current parameter values on
    every call.  Relative error uses ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if h <= 0:
        raise ContractError("grad_check needs h > 0")
    params = list(params)
    first, second = float(f().data), float(f().data)
    if first != second:
        raise ContractError("grad_check: f is not deterministic (is dropout enabled?)")
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + h
            up = float(f().data)
            flat[idx] = keep - h
            down = float(f().data)
            flat[idx] = keep
            numeric = (up - down) / (2.0 * h)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# checkpoint container
# --------------------------------------------------------------------------

CHECKPOINT_FORMAT = "gilbench-params"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint unreadable, of another format, or of an unsupported version."""


def save_parameters(path, params: Iterable[Parameter], meta: dict | None = None) -> None:
    """Write ``name -> float64 payload`` plus a JSON header into an ``.npz`` archive.

    The write goes through a temporary file and an atomic rename.
    """
    path = Path(path)
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "meta": meta or {}}
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for p in params:
        if not p.name or p.name.startswith("__"):
            raise CheckpointError(f"parameter needs a plain name, got {p.name!r}")
        if p.name in arrays:
            raise CheckpointError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = np.array(p.data, dtype=np.float64, order="C")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_parameters(path) -> tuple[dict[str, np.ndarray], dict]:
    """Inverse of :func:`save_parameters`; returns ``(arrays, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["__header__"]))
            arrays = {k: archive[k].astype(np.float64, copy=False)
                      for k in archive.files if k != "__header__"}
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    except (KeyError, ValueError, OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"{path}: not a parameter checkpoint ({exc})") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('version')!r}, "
                              f"this build reads version {CHECKPOINT_VERSION}")
    return arrays, header.get("meta", {})
