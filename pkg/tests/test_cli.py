import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from rnncpsi.cli import InputFileError, main, parse_sigma, read_series
from rnncpsi.harness import ExperimentConfig, run_experiment
from rnncpsi.plotting import plot_report


@pytest.fixture
def staircase(tmp_path):
    rng = np.random.default_rng(0)
    x = np.r_[np.zeros(20), np.full(20, 4.0), np.full(20, 8.0)] + rng.normal(size=60)
    path = tmp_path / "x.csv"
    path.write_text("value\n" + "\n".join(repr(float(v)) for v in x) + "\n")
    return path


def test_detect(staircase, capsys):
    assert main(["detect", str(staircase)]) == 0
    tau = capsys.readouterr().out.splitlines()[0].split()[1:]
    assert [abs(int(t) - c) <= 2 for t, c in zip(tau, (20, 40))] == [True, True]


def test_detect_writes_scores(staircase, tmp_path, capsys):
    out = tmp_path / "scores.csv"
    assert main(["detect", str(staircase), "--scores", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 60 and set(rows[0]) == {"i", "x", "e", "s_ano", "local_max"}


def test_test_naive_only(staircase, capsys):
    assert main(["test", str(staircase), "--sigma", "identity", "--method", "naive"]) == 0
    captured = capsys.readouterr()
    rows = list(csv.reader(io.StringIO(captured.out)))
    assert rows[0] == ["k", "tau", "p_naive"]
    assert len(rows) == 3
    assert all(float(r[2]) < 1e-6 for r in rows[1:])
    assert "CP 1 at" in captured.err


def test_test_is_deterministic(staircase, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert main(["test", str(staircase), "--sigma", "identity", "--method", "oc,naive",
                     "--out", str(path)]) == 0
        outs.append(path.read_text())
    assert outs[0] == outs[1]


def test_sigma_and_estimate_are_exclusive(staircase, capsys):
    assert main(["test", str(staircase)]) == 2
    assert main(["test", str(staircase), "--sigma", "identity", "--estimate-variance"]) == 2


def test_unknown_config_key(staircase, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"K": 2, "smoothing": 3}))
    assert main(["detect", str(staircase), "--config", str(cfg)]) == 2
    assert "smoothing" in capsys.readouterr().err


def test_input_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0\n2.0,3.0\n")
    assert main(["detect", str(bad)]) == 3
    assert main(["detect", str(tmp_path / "missing.csv")]) == 3
    with pytest.raises(InputFileError):
        read_series(str(bad))


def test_constant_series_fails_detection(tmp_path, capsys):
    flat = tmp_path / "flat.csv"
    flat.write_text("\n".join(["1.0"] * 60))
    assert main(["detect", str(flat)]) == 4


def test_parse_sigma(tmp_path):
    np.testing.assert_array_equal(parse_sigma("identity:2", 3), 2 * np.eye(3))
    ar = parse_sigma("ar:0.5", 3)
    assert ar[0, 2] == 0.25
    np.savetxt(tmp_path / "s.txt", np.eye(3), delimiter=",")
    np.testing.assert_array_equal(parse_sigma(f"file:{tmp_path / 's.txt'}", 3), np.eye(3))


def test_train_is_reproducible(tmp_path, capsys):
    args = ["--d-h", "3", "--window", "5", "--epochs", "20", "--seed", "2"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["train", "--out", str(a), *args]) == 0
    assert main(["train", "--out", str(b), *args]) == 0
    assert a.read_text() == b.read_text()


def test_train_divergence_exit_code(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "w.json"), "--d-h", "3", "--window", "5",
                 "--epochs", "20", "--learning-rate", "1e3"]) == 5
    assert "smaller learning rate" in capsys.readouterr().err


def test_experiment_smoke(tmp_path, capsys):
    assert main(["experiment", "type1", "--trials", "2", "--n", "40", "--method", "oc,naive",
                 "--out-dir", str(tmp_path), "--plot", "svg"]) == 0
    assert (tmp_path / "type1.csv").exists() and (tmp_path / "type1.json").exists()
    assert (tmp_path / "type1.svg").read_text().startswith("<?xml")


def test_console_script(staircase):
    proc = subprocess.run([sys.executable, "-m", "rnncpsi.cli", "detect", str(staircase)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("tau ")


def test_plot_is_deterministic(tmp_path):
    rep = run_experiment(ExperimentConfig(n_list=[40], trials=2, methods=["oc", "naive"]))
    a = plot_report(rep, tmp_path / "a.svg").read_text()
    b = plot_report(rep, tmp_path / "b.svg").read_text()
    assert a == b
