import csv
import json
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from tbptt.cli import main
from tbptt.data import load_csv
from tbptt.rnn_core import CellSpec, Params, init_params
from tbptt.training import AdamConfig, TrainConfig, train


def run(*argv):
    return main([str(a) for a in argv])


def only_run_dir(root: Path, command: str) -> Path:
    dirs = list((root / command).iterdir())
    assert len(dirs) == 1
    return dirs[0]


def synth(tmp_path, name="a", **kw):
    out = tmp_path / name
    args = ["--out", out, "synth", "--T", 60, "--T-test", 30, "--seed", 5,
            "--noise", 0.02]
    for flag, value in kw.items():
        args += [f"--{flag}", value]
    assert run(*args) == 0
    return only_run_dir(out, "synth")


def test_synth_writes_expected_files(tmp_path):
    run_dir = synth(tmp_path)
    assert (run_dir / "train.csv").exists()
    assert (run_dir / "test.csv").exists()
    assert not (run_dir / "val.csv").exists()
    assert (run_dir / "generator.json").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert manifest["config"]["T"] == 60
    ds = load_csv(run_dir / "train.csv", ["u"], ["y"])
    assert ds.T == 60


def test_synth_byte_identical_reruns(tmp_path):
    d1 = synth(tmp_path, "a")
    d2 = synth(tmp_path, "b")
    for name in ("train.csv", "test.csv", "generator.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_synth_noiseless_flag(tmp_path):
    out = tmp_path / "clean"
    assert run("--out", out, "synth", "--T", 40, "--T-test", 0, "--noise", 0.0,
               "--warmup", 0, "--seed", 2) == 0
    run_dir = only_run_dir(out, "synth")
    gen = json.loads((run_dir / "generator.json").read_text())
    assert gen["noise_std"] == 0.0


TRAIN_FLAGS = ["--cell", "linear", "--d-h", 1, "--N", 12, "--m", 3,
               "--batch", 8, "--opt", "adam", "--lr", 0.03, "--epochs", 15,
               "--seed", 4]


def test_train_run_and_rerun_bit_identical(tmp_path):
    data_file = synth(tmp_path) / "train.csv"
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run("--out", out1, "train", "--data", data_file, *TRAIN_FLAGS) == 0
    assert run("--out", out2, "train", "--data", data_file, *TRAIN_FLAGS) == 0
    d1 = only_run_dir(out1, "train")
    d2 = only_run_dir(out2, "train")
    assert d1.name == d2.name  # same config hash
    for name in ("params.json", "log.jsonl", "summary.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_train_is_thin_shell_over_library(tmp_path):
    data_file = synth(tmp_path) / "train.csv"
    out = tmp_path / "run"
    assert run("--out", out, "train", "--data", data_file, *TRAIN_FLAGS) == 0
    run_dir = only_run_dir(out, "train")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = manifest["config"]

    dataset = load_csv(data_file, ["u"], ["y"])
    config = TrainConfig(
        spec=CellSpec.from_json_dict(cfg["spec"]),
        N=cfg["N"],
        m=cfg["m"],
        batch_size=cfg["batch_size"],
        optimizer=AdamConfig(lr=cfg["optimizer"]["lr"]),
        epochs=cfg["epochs"],
        stride=cfg["stride"],
        seed=cfg["seed"],
        spectral_bound=cfg["spectral_bound"],
        mode=cfg["mode"],
    )
    log = train(dataset, config)
    stored = Params.from_json((run_dir / "params.json").read_text())
    npt.assert_array_equal(stored.theta, log.params.theta)


def test_train_epochs_zero_keeps_initialization(tmp_path):
    data_file = synth(tmp_path) / "train.csv"
    out = tmp_path / "run"
    assert run("--out", out, "train", "--data", data_file, "--cell", "elman",
               "--d-h", 2, "--N", 10, "--m", 0, "--epochs", 0, "--seed", 7) == 0
    run_dir = only_run_dir(out, "train")
    stored = Params.from_json((run_dir / "params.json").read_text())
    expected = init_params(CellSpec("elman", 1, 2, 1), 7)
    npt.assert_array_equal(stored.theta, expected.theta)


def test_train_usage_error_on_bad_burn_in(tmp_path):
    data_file = synth(tmp_path) / "train.csv"
    code = run("--out", tmp_path / "x", "train", "--data", data_file,
               "--N", 10, "--m", 10, "--epochs", 1)
    assert code == 2


def test_train_missing_file_is_usage_error(tmp_path):
    code = run("--out", tmp_path / "x", "train", "--data", tmp_path / "nope.csv",
               "--epochs", 1)
    assert code == 2


def test_train_bptt_mode_ignores_window(tmp_path):
    data_file = synth(tmp_path) / "train.csv"
    out = tmp_path / "run"
    assert run("--out", out, "train", "--data", data_file, "--mode", "bptt",
               "--N", 7, "--stride", 5, "--m", 2, "--batch", 1,
               "--epochs", 3, "--seed", 1) == 0
    run_dir = only_run_dir(out, "train")
    lines = (run_dir / "log.jsonl").read_text().strip().splitlines()
    assert len(lines) == 3


def test_sweep_single_cell_matches_train(tmp_path):
    base = synth(tmp_path)
    out = tmp_path / "sweep"
    assert run("--out", out, "sweep", "--data", base / "train.csv",
               "--test", base / "test.csv", "--N-list", "12", "--m-list", "3",
               "--jobs", 1, *TRAIN_FLAGS[:0], "--cell", "linear", "--d-h", 1,
               "--batch", 8, "--opt", "adam", "--lr", 0.03, "--epochs", 15,
               "--seed", 4) == 0
    run_dir = only_run_dir(out, "sweep")
    with open(run_dir / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    row = rows[0]
    assert row["error"] == ""
    assert float(row["test_mse"]) > 0

    out2 = tmp_path / "single"
    assert run("--out", out2, "train", "--data", base / "train.csv", *TRAIN_FLAGS) == 0
    train_dir = only_run_dir(out2, "train")
    summary = json.loads((train_dir / "summary.json").read_text())
    assert float(row["train_mse"]) == pytest.approx(summary["final_objective"], rel=1e-12)


def test_sweep_flags_invalid_cells_and_continues(tmp_path):
    base = synth(tmp_path)
    out = tmp_path / "sweep"
    code = run("--out", out, "sweep", "--data", base / "train.csv",
               "--N-list", "8", "--m-list", "0,8", "--epochs", 3,
               "--batch", 4, "--jobs", 1)
    assert code == 0  # invalid pairs are flagged, not fatal
    run_dir = only_run_dir(out, "sweep")
    with open(run_dir / "report.csv") as fh:
        rows = {(r["N"], r["m"]): r for r in csv.DictReader(fh)}
    assert rows[("8", "0")]["error"] == ""
    assert "exceeds" in rows[("8", "8")]["error"]


def test_benchmark_selected_variant_only(tmp_path):
    base = synth(tmp_path)
    out = tmp_path / "bench"
    assert run("--out", out, "benchmark", "--data", base / "train.csv",
               "--N", 10, "--m-list", "2", "--variants", "coupled",
               "--restarts", 1, "--iters", 500) == 0
    run_dir = only_run_dir(out, "benchmark")
    files = {p.name for p in run_dir.iterdir()}
    assert "solution_coupled_m2.json" in files
    assert not any(f.startswith("solution_tbptt") for f in files)
    assert "report.csv" not in files  # needs both star and bench


def test_benchmark_full_report(tmp_path):
    base = synth(tmp_path)
    out = tmp_path / "bench"
    assert run("--out", out, "benchmark", "--data", base / "train.csv",
               "--N", 10, "--m-list", "1,3", "--restarts", 1,
               "--iters", 1500) == 0
    run_dir = only_run_dir(out, "bench" "mark")
    with open(run_dir / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["m"] for r in rows] == ["1", "3"]
    report = json.loads((run_dir / "report_m1.json").read_text())
    assert {"V_star", "V_bench", "training_regret", "thm1_rhs"} <= set(report)


def test_benchmark_rejects_bad_variant_and_burn_in(tmp_path):
    base = synth(tmp_path)
    assert run("--out", tmp_path / "z", "benchmark", "--data", base / "train.csv",
               "--variants", "sgd") == 2
    assert run("--out", tmp_path / "z", "benchmark", "--data", base / "train.csv",
               "--N", 10, "--m-list", "10") == 2


def test_out_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("TBPTT_RUNS_DIR", str(tmp_path / "envruns"))
    assert run("synth", "--T", 20, "--T-test", 0, "--seed", 1) == 0
    assert (tmp_path / "envruns" / "synth").exists()
