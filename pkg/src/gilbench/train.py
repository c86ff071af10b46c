"""Full-batch teacher-forced training with MSE loss and Adam."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Parameter, Tape
from .dynamics import Trajectory
from .models import RnnModel, SequenceModel, save_model
from .nn import Mode


class TrainingDivergedError(ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.alpha > 0 and self.epsilon > 0):
            raise ContractError(f"invalid Adam constants {self}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25_000
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    loss_log_stride: int = 100
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")
        if self.loss_log_stride < 1:
            raise ContractError("loss_log_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: SequenceModel
    loss_curve: list[tuple[int, float]]
    wall_time: float

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1][1]


def mse_loss(pred, target) -> float:
    """Mean of squared differences over all 2T scalar components."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size == 0:
        raise ContractError(f"mse_loss: shapes {pred.shape} and {target.shape} must match and be non-empty")
    return float(np.mean((pred - target) ** 2))


def adam_step(params: Sequence[Parameter], cfg: AdamConfig, t: int) -> None:
    """In-place bias-corrected Adam update using each parameter's ``grad``."""
    if t < 1:
        raise ContractError(f"Adam step counter must be >= 1, got {t}")
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p in params:
        g = p.grad
        p.adam_m *= cfg.beta1
        p.adam_m += (1.0 - cfg.beta1) * g
        p.adam_v *= cfg.beta2
        p.adam_v += (1.0 - cfg.beta2) * g * g
        p.data -= cfg.alpha * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + cfg.epsilon)


def stack_dataset(dataset: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise ContractError("training needs at least one trajectory")
    lengths = {len(t) for t in dataset}
    if len(lengths) != 1:
        raise ContractError(f"all training trajectories must share one length, got {sorted(lengths)}")
    if lengths.pop() < 2:
        raise ContractError("training trajectories need at least 2 points")
    pts = np.stack([t.points for t in dataset])
    return pts[:, :-1].copy(), pts[:, 1:].copy()


def dataset_loss(model: SequenceModel, inputs: np.ndarray, targets: np.ndarray,
                 mode: Mode = Mode.TRAIN, rng: np.random.Generator | None = None) -> ad.ValueGrid:
    """Mean over sequences of per-sequence MSE (equal lengths make this the grand mean)."""
    indices = list(range(len(inputs)))
    return ad.mean_square(model.predict(inputs, indices, mode, rng), targets)


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch])


def train(model: SequenceModel, dataset: Sequence[Trajectory], cfg: TrainConfig) -> TrainResult:
    inputs, targets = stack_dataset(dataset)
    if isinstance(model, RnnModel):
        model.set_sequence_count(len(dataset))
    params = model.parameters()
    uses_dropout = model.config.dropout_rate > 0
    curve: list[tuple[int, float]] = []
    window = []
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        for p in params:
            p.zero_grad()
        rng = epoch_rng(cfg.seed, epoch) if uses_dropout else None
        with Tape() as tape:
            loss = dataset_loss(model, inputs, targets, Mode.TRAIN, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDivergedError(epoch, value)
        tape.backward(loss)
        adam_step(params, cfg.adam, epoch)
        window.append(value)
        if epoch % cfg.loss_log_stride == 0 or epoch == cfg.epochs:
            curve.append((epoch, float(np.mean(window))))
            window.clear()
        if cfg.checkpoint_every and cfg.checkpoint_dir and epoch % cfg.checkpoint_every == 0:
            save_model(model, Path(cfg.checkpoint_dir) / f"epoch{epoch:06d}.npz")
    if cfg.checkpoint_dir:
        save_model(model, Path(cfg.checkpoint_dir) / "final.npz")
    return TrainResult(model, curve, time.perf_counter() - start)


def write_loss_curve(curve: Sequence[tuple[int, float]], path) -> None:
    lines = ["# epoch,loss"] + [f"{e},{v:.17g}" for e, v in curve]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
