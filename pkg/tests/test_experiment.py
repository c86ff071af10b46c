import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gilbench.dynamics import Kind, PointAttractorConfig, attractor, load_trajectory
from gilbench.experiment import (Cell, FingerprintMismatch, SweepSpec, dump_rollouts,
                                 eval_initials, preset, read_rows, run_cell, run_sweep, summarize,
                                 training_data)
from gilbench.models import ModelConfig, ModelKind, SequenceModel, build_model, save_model
from gilbench.nn import ConfigError
from gilbench.train import AdamConfig

POINT, CYCLIC = Kind.POINT, Kind.CYCLIC
RNN, TF = ModelKind.RNN, ModelKind.TRANSFORMER


def tiny(**kw) -> SweepSpec:
    base = dict(attractors=(POINT,), models=(RNN,), n_train_list=(1, 2), seeds=(0,), epochs=3, n_eval_inits=2)
    base.update(kw)
    return SweepSpec(**base)


# -- counting ----------------------------------------------------------------

def test_paper_main_cell_count():
    assert len(preset("paper-main").cells()) == 2 * 2 * 12 * 5
    assert len(SweepSpec(seeds=(0,)).cells()) == 48


def test_dropout_preset_adds_rows_per_attractor():
    spec = SweepSpec(models=(TF,), dropout_rates=(0.0, 0.01, 0.1, 0.3), seeds=(0,))
    per_attractor = {a: sum(c.attractor is a for c in spec.cells()) for a in (POINT, CYCLIC)}
    assert per_attractor == {POINT: 4 * 12, CYCLIC: 4 * 12}


def test_figure_eight_preset_uses_one_sequence():
    spec = preset("figure-eight")
    assert {c.n_train for c in spec.cells()} == {1}
    assert {c.attractor for c in spec.cells()} == {Kind.FIGURE_EIGHT}


def test_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec(models=(RNN,), dropout_rates=(0.1,))
    with pytest.raises(ConfigError):
        SweepSpec(n_train_list=())
    with pytest.raises(ConfigError):
        SweepSpec(n_train_list=(0,))
    with pytest.raises(ConfigError):
        preset("nope")
    with pytest.raises(ConfigError):
        SweepSpec.from_dict({"epochs": 5, "colour": "red"})
    with pytest.raises(ConfigError):
        SweepSpec.from_dict({"point": {"alpha": 2.0}})
    spec = tiny()
    assert SweepSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# -- seeding -----------------------------------------------------------------

def test_cell_seeds_are_injective():
    cells = SweepSpec(models=(TF,), dropout_rates=(0.0, 0.01, 0.1, 0.3)).cells()
    cells += SweepSpec().cells()
    cells = list({c.key(): c for c in cells}.values())
    seeds = [c.init_seed() for c in cells] + [c.dropout_seed() for c in cells]
    assert len(set(seeds)) == len(seeds)


@settings(max_examples=50)
@given(st.integers(0, 2**63), st.integers(0, 2**63))
def test_distinct_seeds_give_distinct_streams(s1, s2):
    a, b = Cell(POINT, TF, 0.0, 3, s1), Cell(POINT, TF, 0.0, 3, s2)
    assert (a.init_seed() == b.init_seed()) == (s1 == s2)


def test_training_data_is_nested_and_shared_across_models():
    spec = tiny()
    small = training_data(spec, Cell(POINT, RNN, 0.0, 2, 0))
    large = training_data(spec, Cell(POINT, TF, 0.0, 5, 0))
    for a, b in zip(small, large):
        assert np.array_equal(a.points, b.points)
    other_seed = training_data(spec, Cell(POINT, RNN, 0.0, 2, 1))
    assert not np.array_equal(small[0].points, other_seed[0].points)


def test_eval_initials_shared_across_cells_of_one_seed():
    spec = tiny()
    a, _ = eval_initials(spec, Cell(POINT, RNN, 0.0, 1, 0))
    b, _ = eval_initials(spec, Cell(POINT, TF, 0.0, 50, 0))
    c, _ = eval_initials(spec, Cell(CYCLIC, RNN, 0.0, 1, 0))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# -- cells and sweeps --------------------------------------------------------

def test_run_cell_is_deterministic():
    spec = tiny()
    cell = Cell(POINT, RNN, 0.0, 1, 0)
    a, b = run_cell(spec, cell), run_cell(spec, cell)
    assert a.result_fields() == b.result_fields()
    assert np.isfinite(a.mean_dtw) and a.mean_dtw > 0
    assert (a.ref_mean_dtw, a.ref_se_dtw) == (15.4, 3.1)


def test_fingerprint_tracks_meaning_not_extent():
    spec = tiny()
    assert spec.fingerprint() == tiny(n_train_list=(7,), seeds=(3, 4), models=(TF,)).fingerprint()
    assert spec.fingerprint() != tiny(epochs=4).fingerprint()
    assert spec.fingerprint() != tiny(point=PointAttractorConfig(alpha=-0.5)).fingerprint()


def test_sweep_writes_rows_summary_and_metadata(tmp_path):
    spec = tiny(seeds=(0, 1))
    result = run_sweep(spec, tmp_path)
    assert len(result.rows) == 4
    assert len(read_rows(tmp_path / "report.csv")) == 4
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["fingerprint"] == spec.fingerprint()
    with open(tmp_path / "summary.csv") as fh:
        summary = list(csv.DictReader(fh))
    assert [int(r["n_seeds"]) for r in summary] == [2, 2]
    assert summarize(result.rows) == result.summary


def test_resume_runs_each_cell_once(tmp_path):
    spec = tiny(seeds=(0, 1))
    first = run_sweep(tiny(seeds=(0,)), tmp_path)  # an interrupted run: half the cells
    assert len(first.rows) == 2
    ran = []
    result = run_sweep(spec, tmp_path, progress=ran.append)
    assert len(ran) == 2
    keys = [r.key() for r in read_rows(tmp_path / "report.csv")]
    assert sorted(keys) == sorted(c.key() for c in spec.cells())
    again = []
    run_sweep(spec, tmp_path, progress=again.append)
    assert again == [] and len(read_rows(tmp_path / "report.csv")) == 4
    assert {r.key() for r in result.rows} == set(keys)


def test_resumed_rows_equal_fresh_rows(tmp_path):
    spec = tiny()
    run_sweep(tiny(n_train_list=(1,)), tmp_path / "a")
    resumed = run_sweep(spec, tmp_path / "a").rows
    fresh = run_sweep(spec, tmp_path / "b").rows
    as_dict = lambda rows: {r.key(): r.result_fields() for r in rows}  # noqa: E731
    assert as_dict(resumed) == as_dict(fresh)


def test_fingerprint_mismatch_refuses_to_mix(tmp_path):
    run_sweep(tiny(n_train_list=(1,)), tmp_path)
    with pytest.raises(FingerprintMismatch):
        run_sweep(tiny(n_train_list=(1,), epochs=4), tmp_path)


def test_report_rows_round_trip_through_csv(tmp_path):
    rows = run_sweep(tiny(n_train_list=(1,)), tmp_path).rows
    back = read_rows(tmp_path / "report.csv")
    assert back[0].result_fields() == rows[0].result_fields()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_training_gives_sentinel_row():
    spec = tiny(n_train_list=(1,), adam=AdamConfig(alpha=1e200), epochs=5)
    row = run_cell(spec, Cell(POINT, RNN, 0.0, 1, 0))
    assert row.train_diverged
    assert row.mean_dtw == row.se_dtw == -1.0
    assert row.diverged_count == spec.n_eval_inits


def test_parallel_sweep_matches_serial(tmp_path):
    spec = tiny(seeds=(0, 1))
    serial = run_sweep(spec, tmp_path / "s").rows
    parallel = run_sweep(spec, tmp_path / "p", parallelism=2).rows
    assert ({r.key(): r.result_fields() for r in serial}
            == {r.key(): r.result_fields() for r in parallel})


# -- rollout dumps -----------------------------------------------------------

class ReplayModel(SequenceModel):
    def __init__(self, att):
        self.att = att
        self.config = ModelConfig()

    def parameters(self):
        return []

    def rollout_batch(self, inits, steps):
        return np.stack([self.att.ground_truth(p).points[:steps + 1] for p in inits])


def test_dump_rollouts_writes_pairs(tmp_path):
    model = build_model(ModelConfig(), 1)
    save_model(model, tmp_path / "m.npz")
    files = dump_rollouts(tmp_path / "m.npz", attractor("point"), 10, tmp_path / "out")
    assert len(files) == 20
    for f in files:
        traj = load_trajectory(f)
        assert len(traj) == 101


def test_dump_rollouts_of_perfect_model_match_reference(tmp_path):
    att = attractor("point")
    dump_rollouts(None, att, 3, tmp_path, model=ReplayModel(att))
    for i in range(3):
        gen = load_trajectory(tmp_path / f"generated_{i:02d}.txt")
        ref = load_trajectory(tmp_path / f"reference_{i:02d}.txt")
        assert np.array_equal(gen.points, ref.points)
