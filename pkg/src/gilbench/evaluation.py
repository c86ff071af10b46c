"""DTW scoring of autoregressive rollouts against ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import ContractError
from .dynamics import INIT_HI, INIT_LO, Attractor, SeededSampler, Trajectory, sample_initials
from .models import SequenceModel, rollout_many

DEFAULT_EVAL_INITS = 10


@dataclass
class DtwResult:
    distance: float
    path: np.ndarray
    cells: tuple[int, int]


def _points(t) -> np.ndarray:
    p = t.points if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64)
    return p.reshape(-1, 2)


def pairwise_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def dtw(a, b) -> DtwResult:
    """Unconstrained DTW, Euclidean local cost, steps (1,0), (0,1), (1,1).

    Among optimal paths the backtrack prefers the diagonal move, then the
    move that advances only the first sequence.
    """
    pa, pb = _points(a), _points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ContractError("dtw needs two non-empty trajectories")
    acc = kernels.dtw_accumulate(pairwise_cost(pa, pb))
    path = kernels.dtw_backtrack(acc)
    return DtwResult(float(acc[-1, -1]), path, (len(pa), len(pb)))


def standard_error(values) -> float:
    """Sample standard deviation (n-1) over sqrt(n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ContractError("standard error needs at least two values")
    if np.all(v == v[0]):
        return 0.0  # np.std leaves rounding residue from the mean
    return float(np.std(v, ddof=1) / np.sqrt(v.size))


@dataclass
class InitScore:
    init: tuple[float, float]
    dtw: float
    diverged: bool


@dataclass
class EvalReport:
    per_init: list[InitScore]
    mean: float
    std_err: float
    meta: dict = field(default_factory=dict)

    @property
    def diverged_count(self) -> int:
        return sum(s.diverged for s in self.per_init)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_err": self.std_err,
            "per_init": [{"init": list(s.init), "dtw": s.dtw, "diverged": s.diverged}
                         for s in self.per_init],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def score_rollouts(references: list[Trajectory], generated: list[Trajectory],
                   diverged: list[bool], inits: np.ndarray, meta: dict | None = None) -> EvalReport:
    scores = []
    for ref, gen, flag, p in zip(references, generated, diverged, inits):
        scores.append(InitScore((float(p[0]), float(p[1])), dtw(gen, ref).distance, bool(flag)))
    d = np.array([s.dtw for s in scores])
    se = standard_error(d) if len(d) > 1 else 0.0
    return EvalReport(scores, float(d.mean()), se, dict(meta or {}))


def evaluate(model: SequenceModel, attractor: Attractor, n_inits: int = DEFAULT_EVAL_INITS,
             steps: int | None = None, sampler: SeededSampler | None = None,
             inits: np.ndarray | None = None) -> EvalReport:
    """Roll the model out from random initials and DTW-score against ground truth.

    ``inits`` overrides sampling (used to share initials across compared models).
    """
    if inits is None:
        if n_inits < 1:
            raise ContractError("evaluate needs n_inits >= 1")
        if sampler is None:
            raise ContractError("evaluate needs a sampler when inits are not given")
        inits = sample_initials(n_inits, INIT_LO, INIT_HI, sampler)
    inits = np.asarray(inits, dtype=np.float64).reshape(-1, 2)
    if len(inits) < 1:
        raise ContractError("evaluate needs at least one initial point")
    steps = attractor.steps if steps is None else steps
    refs = [attractor.ground_truth(p) for p in inits]
    if steps != attractor.steps:
        refs = [Trajectory(r.points[:steps + 1], r.dt, r.kind) for r in refs]
    rolls = rollout_many(model, inits, steps)
    meta = {
        "attractor": attractor.describe(),
        "model_config": model.config.to_dict(),
        "n_inits": len(inits),
        "steps": steps,
        "sampler_seed": None if sampler is None else sampler.seed,
        "rollout_seed_points": 1,
        "dtw": {"local_cost": "euclidean", "steps": "(1,0),(0,1),(1,1)", "window": None},
        "std_err_over": "evaluation initials",
    }
    return score_rollouts(refs, [r.trajectory for r in rolls], [r.diverged for r in rolls], inits, meta)
