"""Elman RNN and decoder-only Transformer behind one predict/rollout interface."""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Parameter, ShapeError, ValueGrid
from .dynamics import DomainError, Kind, SeededSampler, Trajectory
from .nn import (AttentionBlock, ConfigError, DropoutSpec, ElmanCell, LinearLayer, Mode,
                 causal_mask, dropout, elman_step, feed_forward, mha_forward, positional_encoding)

INPUT_DIM = 2


class ModelKind(str, enum.Enum):
    RNN = "rnn"
    TRANSFORMER = "transformer"


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.RNN
    hidden: int = 20
    d_ff: int = 40
    heads: int = 4
    layers: int = 1
    dropout_rate: float = 0.0
    init_seed: int = 0
    max_len: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if min(self.hidden, self.d_ff, self.heads, self.layers, self.max_len) < 1:
            raise ConfigError(f"model sizes must be positive: {self}")
        if self.hidden % self.heads:
            raise ConfigError(f"heads={self.heads} must divide hidden={self.hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.kind is ModelKind.RNN and self.dropout_rate:
            raise ConfigError("the RNN has no dropout layers; dropout_rate must be 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# "40 units" read as d_model=40 instead of d_ff=40
WIDE_TRANSFORMER = ModelConfig(kind=ModelKind.TRANSFORMER, hidden=40, d_ff=40, heads=4)


def _as_batch(inputs) -> np.ndarray:
    x = np.asarray(inputs.data if isinstance(inputs, ValueGrid) else inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != INPUT_DIM:
        raise ShapeError(f"expected inputs [B, T, 2], got {x.shape}")
    return x


def _first_non_finite(seq: np.ndarray) -> int:
    bad = ~np.all(np.isfinite(seq), axis=-1)
    return int(np.argmax(bad)) if bad.any() else len(seq)


class SequenceModel:
    config: ModelConfig

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def predict(self, inputs, seq_indices=None, mode: Mode = Mode.EVAL,
                rng: np.random.Generator | None = None) -> ValueGrid:
        """Next-position estimates for every prefix of ``inputs`` [B, T, 2]."""
        raise NotImplementedError

    def rollout_batch(self, inits: np.ndarray, steps: int) -> np.ndarray:
        raise NotImplementedError

    def rollout(self, init, steps: int, rng=None) -> "Rollout":
        """Autoregressive generation from a single initial point."""
        p = init.as_array() if hasattr(init, "as_array") else np.asarray(init, dtype=np.float64)
        return rollout_many(self, p[None], steps)[0]


class RnnModel(SequenceModel):
    """Elman layer + linear head.  One trainable initial state per training sequence."""

    def __init__(self, config: ModelConfig, n_sequences: int = 0):
        if config.kind is not ModelKind.RNN:
            raise ConfigError("RnnModel needs kind=rnn")
        self.config = config
        rng = SeededSampler(config.init_seed).rng
        self.cell = ElmanCell(INPUT_DIM, config.hidden, rng)
        self.head = LinearLayer(config.hidden, INPUT_DIM, rng, "head")
        self.initial_states: list[Parameter] = []
        self.set_sequence_count(n_sequences)

    def set_sequence_count(self, n: int) -> None:
        while len(self.initial_states) < n:
            i = len(self.initial_states)
            self.initial_states.append(Parameter(np.zeros(self.config.hidden), f"h0.{i}"))

    def parameters(self) -> list[Parameter]:
        return [*self.cell.parameters(), *self.head.parameters(), *self.initial_states]

    def predict(self, inputs, seq_indices=None, mode=Mode.EVAL, rng=None) -> ValueGrid:
        x = _as_batch(inputs)
        if Mode(mode) is Mode.TRAIN:
            if seq_indices is None:
                raise ContractError("training-mode RNN prediction needs seq_indices")
            seq_indices = list(np.atleast_1d(seq_indices))
            if len(seq_indices) != x.shape[0]:
                raise ContractError(f"{len(seq_indices)} seq_indices for batch of {x.shape[0]}")
            if max(seq_indices) >= len(self.initial_states):
                raise ContractError(f"no initial state for sequence {max(seq_indices)}")
            h0 = ad.stack_rows([self.initial_states[i] for i in seq_indices])
        else:
            h0 = np.zeros((x.shape[0], self.config.hidden))
        c = self.cell
        hs = ad.elman_sequence(x, h0, c.w_xh, c.w_hh, c.b_h)
        return self.head(hs)

    def rollout_batch(self, inits: np.ndarray, steps: int) -> np.ndarray:
        inits = np.asarray(inits, dtype=np.float64).reshape(-1, INPUT_DIM)
        out = np.empty((len(inits), steps + 1, INPUT_DIM))
        out[:, 0] = inits
        h = np.zeros((len(inits), self.config.hidden))
        x = inits
        with np.errstate(all="ignore"):
            for k in range(steps):
                h = elman_step(self.cell, h, x).data
                x = self.head(h).data
                out[:, k + 1] = x
        return out


class TransformerModel(SequenceModel):
    """Linear embedding + sinusoidal positions + causal decoder blocks + linear head."""

    def __init__(self, config: ModelConfig):
        if config.kind is not ModelKind.TRANSFORMER:
            raise ConfigError("TransformerModel needs kind=transformer")
        self.config = config
        rng = SeededSampler(config.init_seed).rng
        d = config.hidden
        self.embed = LinearLayer(INPUT_DIM, d, rng, "embed")
        self.pe = positional_encoding(config.max_len, d)
        self.blocks = [AttentionBlock(d, config.heads, config.d_ff, rng, f"block{i}")
                       for i in range(config.layers)]
        self.head = LinearLayer(d, INPUT_DIM, rng, "head")
        self.fused_attention = True

    def parameters(self) -> list[Parameter]:
        ps = self.embed.parameters()
        for b in self.blocks:
            ps += b.parameters()
        return ps + self.head.parameters()

    def predict(self, inputs, seq_indices=None, mode=Mode.EVAL, rng=None) -> ValueGrid:
        x = _as_batch(inputs)
        t = x.shape[1]
        if t > len(self.pe):
            raise ShapeError(f"sequence length {t} exceeds positional table ({len(self.pe)})")
        drop = DropoutSpec(self.config.dropout_rate, Mode(mode))
        h = dropout(ad.add(self.embed(x), self.pe[:t]), drop, rng)
        mask = causal_mask(t)
        for block in self.blocks:
            h = mha_forward(h, block, mask, drop, rng, fused=self.fused_attention)
            h = feed_forward(h, block, drop, rng)
        return self.head(h)

    def rollout_batch(self, inits: np.ndarray, steps: int) -> np.ndarray:
        inits = np.asarray(inits, dtype=np.float64).reshape(-1, INPUT_DIM)
        out = np.empty((len(inits), steps + 1, INPUT_DIM))
        out[:, 0] = inits
        with np.errstate(all="ignore"):
            for k in range(steps):
                # re-encode the whole generated prefix, positions 0..k
                out[:, k + 1] = self.predict(out[:, :k + 1]).data[:, -1]
        return out


def build_model(config: ModelConfig, n_sequences: int = 0) -> SequenceModel:
    if config.kind is ModelKind.RNN:
        return RnnModel(config, n_sequences)
    return TransformerModel(config)


def teacher_forced_predict(model: SequenceModel, traj: Trajectory, seq_index: int | None = None,
                           mode: Mode = Mode.EVAL, rng: np.random.Generator | None = None) -> np.ndarray:
    """Predictions [T, 2]; row k estimates traj[k+1] from ground-truth traj[0..k]."""
    if len(traj) < 2:
        raise DomainError("teacher forcing needs a trajectory of at least 2 points")
    idx = None if seq_index is None else [seq_index]
    return model.predict(traj.points[None, :-1], idx, mode, rng).data[0]


@dataclass
class Rollout:
    trajectory: Trajectory
    diverged: bool


def rollout_many(model: SequenceModel, inits: np.ndarray, steps: int) -> list[Rollout]:
    """Roll out every initial point; non-finite outputs truncate that rollout."""
    if steps < 0:
        raise DomainError("steps must be non-negative")
    inits = np.asarray(inits, dtype=np.float64).reshape(-1, INPUT_DIM)
    if steps == 0:
        seqs = inits[:, None, :].copy()
    else:
        seqs = model.rollout_batch(inits, steps)
    result = []
    for seq in seqs:
        cut = _first_non_finite(seq)
        result.append(Rollout(Trajectory(seq[:cut], 1.0, Kind.IMPORTED), cut < len(seq)))
    return result


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_model(model: SequenceModel, path) -> None:
    meta = {"model_config": model.config.to_dict(),
            "n_sequences": len(getattr(model, "initial_states", []))}
    ad.save_parameters(path, model.parameters(), meta)


def load_model(path) -> SequenceModel:
    arrays, meta = ad.load_parameters(path)
    try:
        config = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise ad.CheckpointError(f"{path}: checkpoint lacks a model config ({exc})") from None
    model = build_model(config, int(meta.get("n_sequences", 0)))
    params = model.named_parameters()
    if set(params) != set(arrays):
        raise ad.CheckpointError(f"{path}: parameter names do not match the model "
                                 f"(missing {sorted(set(params) - set(arrays))}, "
                                 f"extra {sorted(set(arrays) - set(params))})")
    for name, p in params.items():
        if arrays[name].shape != p.shape:
            raise ad.CheckpointError(f"{path}: {name} has shape {arrays[name].shape}, expected {p.shape}")
        p.data[...] = arrays[name]
    return model


def with_dropout(config: ModelConfig, rate: float) -> ModelConfig:
    return replace(config, dropout_rate=rate)
