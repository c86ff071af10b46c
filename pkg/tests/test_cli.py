import json
import subprocess
import sys

import numpy as np
import pytest

from gilbench.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_FAILED, EXIT_OK, main
from gilbench.dynamics import load_trajectory


def tiny_spec(tmp_path, **kw):
    spec = dict(attractors=["point"], models=["rnn"], n_train_list=[1], seeds=[0], epochs=3, n_eval_inits=2)
    spec.update(kw)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return str(path)


def test_generate_train_evaluate_pipeline(tmp_path, capsys):
    data, run = tmp_path / "data", tmp_path / "run"
    assert main(["generate", "--attractor", "point", "--n", "2", "--seed", "1", "--out", str(data)]) == EXIT_OK
    files = sorted(data.glob("*.txt"))
    assert [f.name for f in files] == ["traj_000.txt", "traj_001.txt"]
    assert len(load_trajectory(files[0])) == 101

    assert main(["train", "--data", str(data), "--model", "transformer", "--epochs", "4",
                 "--log-stride", "2", "--out", str(run)]) == EXIT_OK
    curve = np.loadtxt(run / "loss_curve.csv", delimiter=",")
    assert curve[:, 0].tolist() == [2, 4]
    assert (run / "final.npz").exists()

    capsys.readouterr()
    report_path = tmp_path / "eval.json"
    assert main(["evaluate", "--checkpoint", str(run / "final.npz"), "--attractor", "point",
                 "--n-inits", "3", "--out", str(report_path)]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(report_path.read_text())
    assert len(printed["per_init"]) == 3
    assert printed["meta"]["model_config"]["kind"] == "transformer"


def test_sweep_and_resume(tmp_path, capsys):
    out = tmp_path / "sweep"
    spec = tiny_spec(tmp_path)
    assert main(["sweep", "--config", spec, "--out", str(out)]) == EXIT_OK
    assert main(["sweep", "--config", spec, "--out", str(out)]) == EXIT_OK
    assert (out / "report.csv").read_text().count("\n") == 2  # header + one row


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_every_seed_diverged(tmp_path):
    spec = tiny_spec(tmp_path, adam={"alpha": 1e200}, seeds=[0, 1])
    assert main(["sweep", "--config", spec, "--out", str(tmp_path / "s")]) == EXIT_DIVERGED


def test_dump_rollouts(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    main(["generate", "--attractor", "point", "--out", str(data)])
    main(["train", "--data", str(data), "--epochs", "1", "--out", str(run)])
    assert main(["dump-rollouts", "--checkpoint", str(run / "final.npz"), "--attractor", "point",
                 "--n-inits", "2", "--out", str(tmp_path / "dump")]) == EXIT_OK
    assert len(list((tmp_path / "dump").glob("*.txt"))) == 4


@pytest.mark.parametrize("argv", [
    ["sweep", "--preset", "paper-main", "--epochs", "0", "--out", "{tmp}/x"],
    ["sweep", "--config", "{tmp}/missing.json", "--out", "{tmp}/x"],
    ["sweep", "--config", "{tmp}/bad.json", "--out", "{tmp}/x"],
    ["train", "--data", "{tmp}", "--out", "{tmp}/x"],
    ["train", "--data", "{tmp}/data", "--model", "rnn", "--dropout", "0.1", "--out", "{tmp}/x"],
    ["train", "--data", "{tmp}/data", "--epochs", "0", "--out", "{tmp}/x"],
], ids=["zero-epochs", "missing-config", "bad-json", "no-data", "rnn-dropout", "train-zero-epochs"])
def test_config_errors_exit_2(tmp_path, argv):
    (tmp_path / "bad.json").write_text("{not json")
    main(["generate", "--attractor", "point", "--out", str(tmp_path / "data")])
    assert main([a.replace("{tmp}", str(tmp_path)) for a in argv]) == EXIT_CONFIG


def test_unreadable_inputs_exit_1(tmp_path):
    (tmp_path / "junk.npz").write_bytes(b"junk")
    assert main(["evaluate", "--checkpoint", str(tmp_path / "junk.npz"), "--attractor", "point"]) == EXIT_FAILED
    data = tmp_path / "data"
    data.mkdir()
    (data / "traj.txt").write_text("1.0 2.0\nnot numbers\n")
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "x")]) == EXIT_FAILED


def test_module_entry_point_gradcheck_primitives():
    proc = subprocess.run([sys.executable, "-m", "gilbench", "gradcheck", "--primitives-only"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "checks below 0.0001" in proc.stdout


def test_argparse_rejects_unknown_attractor():
    with pytest.raises(SystemExit) as info:
        main(["generate", "--attractor", "lorenz", "--out", "x"])
    assert info.value.code == 2
