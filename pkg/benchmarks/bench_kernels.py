"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Shapes are the ones a sweep actually hits: 50 point-attractor sequences of
100 steps through a 20-unit Elman layer, 4-head attention over 100 positions,
and DTW between two 201-point cyclic trajectories.  Also times one full
training epoch of each model under whichever backend the env flag selects.
"""
import argparse
import time

import numpy as np

from gilbench import kernels


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation for the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.normal(size=(50, 100, 2))
    h0 = rng.uniform(-1, 1, size=(50, 20))
    w, u, b = rng.uniform(-0.2, 0.2, (2, 20)), rng.uniform(-0.2, 0.2, (20, 20)), rng.uniform(-0.2, 0.2, 20)
    hs = kernels.elman_forward_np(x, h0, w, u, b)
    dhs = rng.normal(size=hs.shape)
    q, k, v = (rng.normal(size=(50, 4, 100, 5)) for _ in range(3))
    c = 1 / np.sqrt(5)
    _, probs = kernels.causal_attention_forward_np(q, k, v, c)
    dout = rng.normal(size=q.shape)
    cost = rng.uniform(0, 3, size=(201, 201))
    acc = kernels.dtw_accumulate_np(cost)
    for suffix in ("np", "nb"):
        f = {name: getattr(kernels, f"{name}_{suffix}") for name in (
            "elman_forward", "elman_backward", "causal_attention_forward",
            "causal_attention_backward", "dtw_accumulate", "dtw_backtrack")}
        yield suffix, {
            "elman forward    [50x100x20]": lambda f=f: f["elman_forward"](x, h0, w, u, b),
            "elman backward   [50x100x20]": lambda f=f: f["elman_backward"](x, h0, hs, w, u, dhs),
            "attention fwd    [50x4x100x5]": lambda f=f: f["causal_attention_forward"](q, k, v, c),
            "attention bwd    [50x4x100x5]": lambda f=f: f["causal_attention_backward"](q, k, v, probs, c, dout),
            "dtw accumulate   [201x201]": lambda f=f: f["dtw_accumulate"](cost),
            "dtw backtrack    [201x201]": lambda f=f: f["dtw_backtrack"](acc),
        }


def epoch_times(repeat):
    from gilbench.dynamics import SeededSampler, attractor
    from gilbench.models import ModelConfig, build_model
    from gilbench.train import TrainConfig, train

    data = attractor("point").training_set(50, SeededSampler(0))
    out = {}
    for kind in ("rnn", "transformer"):
        model = build_model(ModelConfig(kind=kind), 50)
        out[kind] = best_of(lambda: train(model, data, TrainConfig(epochs=1)), repeat)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can be timed")
    timings = {}
    for suffix, cases in kernel_cases(np.random.default_rng(0)):
        if suffix == "nb" and not kernels.HAVE_NUMBA:
            continue
        for name, fn in cases.items():
            timings.setdefault(name, {})[suffix] = best_of(fn, args.repeat)
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, t in timings.items():
        nb = t.get("nb")
        row = f"{name:32s} {t['np'] * 1e3:10.3f}"
        row += f" {nb * 1e3:10.3f} {t['np'] / nb:7.1f}x" if nb else f" {'-':>10s} {'-':>8s}"
        print(row)
    print(f"\none full-batch epoch on 50 sequences, backend={kernels.BACKEND}:")
    for kind, t in epoch_times(max(3, args.repeat // 4)).items():
        print(f"  {kind:12s} {t * 1e3:8.2f} ms")


if __name__ == "__main__":
    main()
