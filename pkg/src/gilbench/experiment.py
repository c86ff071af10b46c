"""Sweeps over attractor x model x dropout x n_train x seed with resumable CSV reports.

Output directory layout::

    metadata.json   spec, fingerprint and design-decision record
    report.csv      one row per finished cell, appended as cells complete
    summary.csv     per-curve aggregate over seeds (rewritten at the end)
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__, kernels, reference
from .dynamics import (Attractor, FigureEightConfig, Kind, PointAttractorConfig, SeededSampler,
                       VanDerPolConfig, derive_seed, sample_initials, save_trajectory, INIT_HI, INIT_LO)
from .evaluation import DEFAULT_EVAL_INITS, EvalReport, evaluate
from .models import ModelConfig, ModelKind, SequenceModel, build_model, load_model, rollout_many
from .nn import ConfigError
from .train import AdamConfig, TrainConfig, TrainingDivergedError, train

log = logging.getLogger(__name__)

PAPER_N_TRAIN = reference.N_TRAIN
PAPER_DROPOUTS = (0.0, 0.01, 0.1, 0.3)
SMOKE_EPOCHS = 5_000
SENTINEL = -1.0

_ATTRACTOR_CODE = {Kind.POINT: 0, Kind.CYCLIC: 1, Kind.FIGURE_EIGHT: 2}
_MODEL_CODE = {ModelKind.RNN: 0, ModelKind.TRANSFORMER: 1}
_STREAM_TRAIN_DATA, _STREAM_EVAL, _STREAM_INIT, _STREAM_DROPOUT = 1, 2, 3, 4

DESIGN_DECISIONS = {
    "point_integrator": "exact exponential map",
    "cyclic_integrator": "rk4",
    "embedding": "linear 2->d_model",
    "decoder_norm": "post-layer-norm residual",
    "ffn_activation": "relu",
    "units_40_reading": "d_ff=40, d_model=20 (head dim 5)",
    "attention_projection_bias": False,
    "weight_init": "uniform +-1/sqrt(fan_in)",
    "rnn_initial_state": "trainable per training sequence, zero at evaluation",
    "batching": "full batch",
    "loss_aggregation": "mean over sequences of per-sequence MSE",
    "rollout_seed_points": 1,
    "transformer_rollout_context": "full generated prefix from position 0",
    "dtw_local_cost": "euclidean",
    "std_err_population": "evaluation initials (per row); seeds (summary)",
    "data_pairing": "training/eval initials shared by all models for a (seed, attractor)",
    "figure_eight_reference": "noise-free Lissajous curve",
}


class FingerprintMismatch(ConfigError):
    """An existing report was produced by a different sweep configuration."""


def _dropout_key(p: float) -> int:
    return int.from_bytes(struct.pack("<d", float(p)), "little")


@dataclass(frozen=True)
class Cell:
    attractor: Kind
    model: ModelKind
    dropout: float
    n_train: int
    seed: int

    def key(self) -> tuple:
        return (self.attractor.value, self.model.value, float(self.dropout), int(self.n_train), int(self.seed))

    def init_seed(self) -> int:
        return derive_seed(self.seed, _ATTRACTOR_CODE[self.attractor], _MODEL_CODE[self.model],
                           _dropout_key(self.dropout), self.n_train, _STREAM_INIT)

    def dropout_seed(self) -> int:
        return derive_seed(self.seed, _ATTRACTOR_CODE[self.attractor], _MODEL_CODE[self.model],
                           _dropout_key(self.dropout), self.n_train, _STREAM_DROPOUT)


@dataclass(frozen=True)
class SweepSpec:
    attractors: tuple[Kind, ...] = (Kind.POINT, Kind.CYCLIC)
    models: tuple[ModelKind, ...] = (ModelKind.RNN, ModelKind.TRANSFORMER)
    n_train_list: tuple[int, ...] = PAPER_N_TRAIN
    dropout_rates: tuple[float, ...] = (0.0,)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 25_000
    adam: AdamConfig = field(default_factory=AdamConfig)
    hidden: int = 20
    d_ff: int = 40
    heads: int = 4
    layers: int = 1
    n_eval_inits: int = DEFAULT_EVAL_INITS
    point: PointAttractorConfig = field(default_factory=PointAttractorConfig)
    vdp: VanDerPolConfig = field(default_factory=VanDerPolConfig)
    eight: FigureEightConfig = field(default_factory=FigureEightConfig)

    def __post_init__(self):
        object.__setattr__(self, "attractors", tuple(Kind(a) for a in self.attractors))
        object.__setattr__(self, "models", tuple(ModelKind(m) for m in self.models))
        object.__setattr__(self, "n_train_list", tuple(int(n) for n in self.n_train_list))
        object.__setattr__(self, "dropout_rates", tuple(float(p) for p in self.dropout_rates))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for name in ("attractors", "models", "n_train_list", "dropout_rates", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"sweep dimension {name!r} is empty")
        if min(self.n_train_list) < 1:
            raise ConfigError("n_train values must be >= 1")
        if any(k not in _ATTRACTOR_CODE for k in self.attractors):
            raise ConfigError(f"unsupported attractors {self.attractors}")
        if ModelKind.RNN in self.models and any(p != 0.0 for p in self.dropout_rates):
            raise ConfigError("dropout rates other than 0 apply to the transformer only; "
                              "drop 'rnn' from models or use dropout_rates=[0.0]")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.epochs < 1 or self.n_eval_inits < 1:
            raise ConfigError("epochs and n_eval_inits must be >= 1")

    def cells(self) -> list[Cell]:
        return [Cell(a, m, p, n, s) for a, m, p, n, s in itertools.product(
            self.attractors, self.models, self.dropout_rates, self.n_train_list, self.seeds)]

    def attractor(self, kind: Kind) -> Attractor:
        return Attractor(kind, self.point, self.vdp, self.eight)

    def train_config(self, cell: Cell) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, adam=self.adam, seed=cell.dropout_seed(),
                           loss_log_stride=max(1, self.epochs // 100))

    def model_config(self, cell: Cell) -> ModelConfig:
        return ModelConfig(kind=cell.model, hidden=self.hidden, d_ff=self.d_ff, heads=self.heads,
                           layers=self.layers, dropout_rate=cell.dropout, init_seed=cell.init_seed())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["attractors"] = [a.value for a in self.attractors]
        d["models"] = [m.value for m in self.models]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        nested = {"adam": AdamConfig, "point": PointAttractorConfig,
                  "vdp": VanDerPolConfig, "eight": FigureEightConfig}
        for key, typ in nested.items():
            if key in d:
                try:
                    d[key] = typ(**d[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"invalid {key!r} section: {exc}") from None
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown sweep spec keys {sorted(unknown)}")
        try:
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid sweep spec: {exc}") from None

    def fingerprint(self) -> str:
        """Hash of everything that changes what a row means (not which rows exist)."""
        d = self.to_dict()
        for dim in ("attractors", "models", "n_train_list", "dropout_rates", "seeds"):
            d.pop(dim)
        blob = json.dumps({"spec": d, "design": DESIGN_DECISIONS, "version": __version__},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def preset(name: str) -> SweepSpec:
    if name == "paper-main":
        return SweepSpec()
    if name == "paper-dropout":
        return SweepSpec(models=(ModelKind.TRANSFORMER,), dropout_rates=PAPER_DROPOUTS)
    if name == "figure-eight":
        return SweepSpec(attractors=(Kind.FIGURE_EIGHT,), n_train_list=(1,))
    raise ConfigError(f"unknown preset {name!r} (paper-main, paper-dropout, figure-eight)")


PRESETS = ("paper-main", "paper-dropout", "figure-eight")


# --------------------------------------------------------------------------
# one cell
# --------------------------------------------------------------------------

ROW_FIELDS = ("attractor", "model", "dropout", "n_train", "seed", "mean_dtw", "se_dtw",
              "diverged_count", "train_diverged", "final_loss", "wall_time_s",
              "config_fingerprint", "ref_mean_dtw", "ref_se_dtw", "backend")


@dataclass
class ReportRow:
    attractor: str
    model: str
    dropout: float
    n_train: int
    seed: int
    mean_dtw: float
    se_dtw: float
    diverged_count: int
    train_diverged: bool
    final_loss: float
    wall_time_s: float
    config_fingerprint: str
    ref_mean_dtw: float | None = None
    ref_se_dtw: float | None = None
    backend: str = kernels.BACKEND

    def key(self) -> tuple:
        return (self.attractor, self.model, float(self.dropout), int(self.n_train), int(self.seed))

    def result_fields(self) -> dict:
        """Everything except wall time: the part that must be reproducible."""
        d = dataclasses.asdict(self)
        d.pop("wall_time_s")
        return d

    def to_csv(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("mean_dtw", "se_dtw", "final_loss", "dropout"):
            d[k] = repr(float(d[k]))
        d["wall_time_s"] = f"{self.wall_time_s:.3f}"
        d["train_diverged"] = int(self.train_diverged)
        d["ref_mean_dtw"] = "" if self.ref_mean_dtw is None else repr(self.ref_mean_dtw)
        d["ref_se_dtw"] = "" if self.ref_se_dtw is None else repr(self.ref_se_dtw)
        return d

    @classmethod
    def from_csv(cls, d: dict) -> "ReportRow":
        return cls(
            attractor=d["attractor"], model=d["model"], dropout=float(d["dropout"]),
            n_train=int(d["n_train"]), seed=int(d["seed"]), mean_dtw=float(d["mean_dtw"]),
            se_dtw=float(d["se_dtw"]), diverged_count=int(d["diverged_count"]),
            train_diverged=bool(int(d["train_diverged"])), final_loss=float(d["final_loss"]),
            wall_time_s=float(d["wall_time_s"]), config_fingerprint=d["config_fingerprint"],
            ref_mean_dtw=float(d["ref_mean_dtw"]) if d.get("ref_mean_dtw") else None,
            ref_se_dtw=float(d["ref_se_dtw"]) if d.get("ref_se_dtw") else None,
            backend=d.get("backend", ""),
        )


def training_data(spec: SweepSpec, cell: Cell):
    """Training set for a cell; nested in n_train and shared across models."""
    att = spec.attractor(cell.attractor)
    sampler = SeededSampler.from_key(cell.seed, _ATTRACTOR_CODE[cell.attractor], _STREAM_TRAIN_DATA)
    return att.training_set(cell.n_train, sampler)


def eval_initials(spec: SweepSpec, cell: Cell) -> tuple[np.ndarray, int]:
    """Evaluation initials shared by every model and n_train for a (seed, attractor)."""
    sampler = SeededSampler.from_key(cell.seed, _ATTRACTOR_CODE[cell.attractor], _STREAM_EVAL)
    seed = sampler.seed
    return sample_initials(spec.n_eval_inits, INIT_LO, INIT_HI, sampler), seed


def train_cell(spec: SweepSpec, cell: Cell) -> SequenceModel:
    """Build and train the cell's model (raises TrainingDivergedError)."""
    data = training_data(spec, cell)
    model = build_model(spec.model_config(cell), cell.n_train)
    train(model, data, spec.train_config(cell))
    return model


def evaluate_cell(spec: SweepSpec, cell: Cell, model: SequenceModel) -> EvalReport:
    inits, seed = eval_initials(spec, cell)
    report = evaluate(model, spec.attractor(cell.attractor), inits=inits)
    report.meta["sampler_seed"] = seed
    return report


def run_cell(spec: SweepSpec, cell: Cell) -> ReportRow:
    start = time.perf_counter()
    ref = reference.lookup(cell.attractor.value, cell.model.value, cell.dropout, cell.n_train)
    common = dict(attractor=cell.attractor.value, model=cell.model.value, dropout=float(cell.dropout),
                  n_train=cell.n_train, seed=cell.seed, config_fingerprint=spec.fingerprint(),
                  ref_mean_dtw=ref[0] if ref else None, ref_se_dtw=ref[1] if ref else None)
    data = training_data(spec, cell)
    model = build_model(spec.model_config(cell), cell.n_train)
    try:
        result = train(model, data, spec.train_config(cell))
    except TrainingDivergedError as exc:
        log.warning("cell %s diverged in training: %s", cell.key(), exc)
        return ReportRow(mean_dtw=SENTINEL, se_dtw=SENTINEL, diverged_count=spec.n_eval_inits,
                         train_diverged=True, final_loss=SENTINEL,
                         wall_time_s=time.perf_counter() - start, **common)
    report = evaluate_cell(spec, cell, model)
    return ReportRow(mean_dtw=report.mean, se_dtw=report.std_err, diverged_count=report.diverged_count,
                     train_diverged=False, final_loss=result.final_loss,
                     wall_time_s=time.perf_counter() - start, **common)


def _run_cell_job(spec_dict: dict, key: tuple) -> ReportRow:
    spec = SweepSpec.from_dict(spec_dict)
    a, m, p, n, s = key
    return run_cell(spec, Cell(Kind(a), ModelKind(m), p, n, s))


# --------------------------------------------------------------------------
# sweep runner
# --------------------------------------------------------------------------

def read_rows(path) -> list[ReportRow]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return [ReportRow.from_csv(r) for r in csv.DictReader(fh)]


def _append_row(path: Path, row: ReportRow) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        if new:
            writer.writeheader()
        writer.writerow(row.to_csv())
        fh.flush()
        os.fsync(fh.fileno())


def _write_json_atomic(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def summarize(rows: Iterable[ReportRow]) -> list[dict]:
    """Per (attractor, model, dropout, n_train): mean and standard error across seeds."""
    groups: dict[tuple, list[ReportRow]] = {}
    for r in rows:
        groups.setdefault((r.attractor, r.model, float(r.dropout), int(r.n_train)), []).append(r)
    out = []
    for (a, m, p, n), rs in sorted(groups.items()):
        ok = [r for r in rs if not r.train_diverged]
        means = np.array([r.mean_dtw for r in ok])
        ref = reference.lookup(a, m, p, n)
        out.append({
            "attractor": a, "model": m, "dropout": p, "n_train": n,
            "n_seeds": len(rs), "n_train_diverged": len(rs) - len(ok),
            "mean_dtw_over_seeds": float(means.mean()) if len(means) else SENTINEL,
            "se_dtw_over_seeds": float(np.std(means, ddof=1) / math.sqrt(len(means))) if len(means) > 1 else 0.0,
            "mean_se_over_inits": float(np.mean([r.se_dtw for r in ok])) if ok else SENTINEL,
            "ref_mean_dtw": "" if ref is None else ref[0],
            "ref_se_dtw": "" if ref is None else ref[1],
        })
    return out


SUMMARY_FIELDS = ("attractor", "model", "dropout", "n_train", "n_seeds", "n_train_diverged",
                  "mean_dtw_over_seeds", "se_dtw_over_seeds", "mean_se_over_inits",
                  "ref_mean_dtw", "ref_se_dtw")


def write_summary(rows: Iterable[ReportRow], path) -> list[dict]:
    summary = summarize(rows)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(summary)
    os.replace(tmp, path)
    return summary


@dataclass
class SweepResult:
    rows: list[ReportRow]
    summary: list[dict]
    out_dir: Path

    def all_seeds_diverged(self) -> list[tuple]:
        return [(s["attractor"], s["model"], s["dropout"], s["n_train"]) for s in self.summary
                if s["n_train_diverged"] == s["n_seeds"]]


def run_sweep(spec: SweepSpec, out_dir, parallelism: int = 1, progress=None) -> SweepResult:
    """Run every missing cell of ``spec`` and (re)write the summary.

    Rows already in ``out_dir/report.csv`` are kept and their cells skipped,
    provided the stored fingerprint matches this spec's.
    """
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = spec.fingerprint()
    meta_path, report_path = out / "metadata.json", out / "report.csv"
    if meta_path.exists():
        stored = json.loads(meta_path.read_text(encoding="utf-8")).get("fingerprint")
        if stored != fp:
            raise FingerprintMismatch(f"{out} holds rows with fingerprint {stored}, this sweep is {fp}; "
                                      "use a fresh output directory")
    existing = read_rows(report_path)
    if any(r.config_fingerprint != fp for r in existing):
        raise FingerprintMismatch(f"{report_path} mixes fingerprints; use a fresh output directory")
    _write_json_atomic(meta_path, {
        "fingerprint": fp, "spec": spec.to_dict(), "design_decisions": DESIGN_DECISIONS,
        "version": __version__, "kernel_backend": kernels.BACKEND,
        "rng": "PCG64 via numpy SeedSequence", "row_fields": list(ROW_FIELDS),
    })
    wanted = spec.cells()
    done = {r.key() for r in existing}
    todo = [c for c in wanted if c.key() not in done]
    rows = list(existing)
    log.info("sweep %s: %d cells, %d already done", fp, len(wanted), len(wanted) - len(todo))

    def record(row: ReportRow) -> None:
        _append_row(report_path, row)
        rows.append(row)
        if progress:
            progress(row)

    if parallelism == 1 or len(todo) <= 1:
        for cell in todo:
            record(run_cell(spec, cell))
    else:
        spec_dict = spec.to_dict()
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            futures = [pool.submit(_run_cell_job, spec_dict, c.key()) for c in todo]
            for fut in as_completed(futures):
                record(fut.result())
    keys = {c.key() for c in wanted}
    selected = [r for r in rows if r.key() in keys]
    summary = write_summary(rows, out / "summary.csv")
    return SweepResult(selected, summary, out)


# --------------------------------------------------------------------------
# rollout dumps for external plotting
# --------------------------------------------------------------------------

def dump_rollouts(checkpoint, attractor: Attractor, n_inits: int, out_dir, seed: int = 0,
                  model: SequenceModel | None = None) -> list[Path]:
    """Write ``generated_XX.txt`` and ``reference_XX.txt`` for each initial point."""
    if model is None:
        model = load_model(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inits = sample_initials(n_inits, INIT_LO, INIT_HI, SeededSampler(seed))
    rolls = rollout_many(model, inits, attractor.steps)
    written = []
    for i, (p, roll) in enumerate(zip(inits, rolls)):
        gen = roll.trajectory
        gen.dt = attractor.ground_truth(p).dt
        for name, traj in ((f"generated_{i:02d}.txt", gen), (f"reference_{i:02d}.txt", attractor.ground_truth(p))):
            save_trajectory(traj, out / name)
            written.append(out / name)
    return written
