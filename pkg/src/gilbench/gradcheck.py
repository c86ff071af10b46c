"""Finite-difference checks for every primitive and both full model losses.

Each primitive is reduced to a scalar through a fixed random weighting so that
every output coordinate contributes a distinct amount to the gradient.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .dynamics import SeededSampler, attractor
from .models import ModelConfig, ModelKind, build_model
from .nn import ElmanCell, elman_step
from .train import dataset_loss, stack_dataset

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _weighted(rng: np.random.Generator, out: ad.ValueGrid, weights: dict) -> ad.ValueGrid:
    w = weights.setdefault(out.shape, rng.normal(size=out.shape))
    return ad.sum_all(ad.mul(out, w))


def _param(rng, shape, name, lo=-1.0, hi=1.0) -> Parameter:
    return Parameter(rng.uniform(lo, hi, size=shape), name)


def primitive_cases(rng: np.random.Generator) -> list[tuple[str, Callable, list[Parameter]]]:
    """(name, scalar loss closure, parameters) for each primitive."""
    cases = []

    def add_case(name, build, params):
        weights: dict = {}
        cases.append((name, lambda: _weighted(rng, build(), weights), params))

    a, b = _param(rng, (3, 4), "a"), _param(rng, (4, 2), "b")
    add_case("matmul", lambda: ad.matmul(a, b), [a, b])
    qa, qb = _param(rng, (2, 3, 4), "a"), _param(rng, (2, 4, 5), "b")
    add_case("matmul_batched", lambda: ad.matmul(qa, qb), [qa, qb])
    x, y = _param(rng, (3, 4), "x"), _param(rng, (4,), "y")
    add_case("add_broadcast", lambda: ad.add(x, y), [x, y])
    add_case("mul_broadcast", lambda: ad.mul(x, y), [x, y])
    add_case("scale", lambda: ad.scale(x, -1.7), [x])
    add_case("tanh", lambda: ad.tanh(x), [x])
    # keep inputs away from the kink at 0
    r = Parameter(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.uniform(0.1, 1.0, size=(3, 4)), "r")
    add_case("relu", lambda: ad.relu(r), [r])
    s = _param(rng, (2, 5), "s", -2.0, 2.0)
    add_case("softmax_rows", lambda: ad.softmax_rows(s), [s])
    allowed = np.tril(np.ones((4, 4), dtype=bool))
    m = _param(rng, (2, 4, 4), "m")
    add_case("masked_softmax", lambda: ad.softmax_rows(ad.masked_fill(m, allowed)), [m])
    ln_x, gain, bias = _param(rng, (3, 6), "x"), _param(rng, (6,), "gain"), _param(rng, (6,), "bias")
    add_case("layer_norm", lambda: ad.layer_norm(ln_x, gain, bias), [ln_x, gain, bias])
    t = _param(rng, (2, 3, 4), "t")
    add_case("transpose", lambda: ad.transpose(t, (1, 2, 0)), [t])
    add_case("reshape", lambda: ad.reshape(t, (6, 4)), [t])
    rows = _param(rng, (5, 3), "rows")
    add_case("slice_rows", lambda: ad.slice_rows(rows, 1, 4), [rows])
    c1, c2 = _param(rng, (2, 3), "c1"), _param(rng, (4, 3), "c2")
    add_case("concat_rows", lambda: ad.concat_rows([c1, c2]), [c1, c2])
    s1, s2 = _param(rng, (3,), "s1"), _param(rng, (3,), "s2")
    add_case("stack_rows", lambda: ad.stack_rows([s1, s2]), [s1, s2])
    target = rng.normal(size=(3, 4))
    cases.append(("mean_square", lambda: ad.mean_square(x, target), [x]))

    ex, eh = _param(rng, (2, 5, 2), "x"), _param(rng, (2, 3), "h0")
    ew, eu, eb = _param(rng, (2, 3), "w_xh"), _param(rng, (3, 3), "w_hh"), _param(rng, (3,), "b")
    add_case("elman_sequence", lambda: ad.elman_sequence(ex, eh, ew, eu, eb), [ex, eh, ew, eu, eb])
    cell = ElmanCell(2, 3, rng)
    h_in, x_in = _param(rng, (2, 3), "h"), _param(rng, (2, 2), "x")
    add_case("elman_step", lambda: elman_step(cell, h_in, x_in), [h_in, x_in, *cell.parameters()])
    q, k, v = (_param(rng, (2, 2, 4, 3), n) for n in "qkv")
    add_case("causal_attention", lambda: ad.causal_attention(q, k, v), [q, k, v])
    return cases


def _model_case(kind: ModelKind, fused: bool = True, steps: int | None = None):
    att = attractor("point")
    data = att.training_set(1, SeededSampler(11))
    inputs, targets = stack_dataset(data)
    if steps is not None:
        inputs, targets = inputs[:, :steps], targets[:, :steps]
    model = build_model(ModelConfig(kind=kind, init_seed=3), n_sequences=1)
    rng = np.random.default_rng(5)
    for p in model.parameters():
        if p.name.startswith("h0"):
            p.data[...] = rng.uniform(-0.5, 0.5, size=p.shape)
        elif "ln" in p.name:
            # move norms off their identity init so their gradients are exercised
            p.data += rng.uniform(-0.2, 0.2, size=p.shape)
    if hasattr(model, "fused_attention"):
        model.fused_attention = fused
    return lambda: dataset_loss(model, inputs, targets), model.parameters()


def model_cases() -> list[tuple[str, Callable, list[Parameter]]]:
    rnn_f, rnn_p = _model_case(ModelKind.RNN)
    tf_f, tf_p = _model_case(ModelKind.TRANSFORMER)
    ref_f, ref_p = _model_case(ModelKind.TRANSFORMER, fused=False, steps=30)
    return [("rnn_loss", rnn_f, rnn_p), ("transformer_loss", tf_f, tf_p),
            ("transformer_loss_composed_attention", ref_f, ref_p)]


def run_suite(seed: int = 0, h: float = STEP, include_models: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cases = primitive_cases(rng)
    if include_models:
        cases += model_cases()
    results = []
    for name, f, params in cases:
        start = time.perf_counter()
        err = ad.grad_check(f, params, h)
        results.append(CheckResult(name, err, time.perf_counter() - start))
    return results
