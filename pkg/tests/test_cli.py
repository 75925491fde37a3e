import csv
import json
import os

import numpy as np
import pytest

from qganlab import cli
from qganlab.data import read_images_csv, read_pgm
from qganlab.training import RECORD_COLUMNS


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_data_bar(tmp_path):
    out = tmp_path / "bars.csv"
    assert run("gen-data", "--task", "bar", "--m", 2, "--n", 1000, "--seed", 7, "--out", out) == 0
    assert len(out.read_text().splitlines()) == 1000
    snap = json.loads((tmp_path / "bars.csv.config.json").read_text())
    assert snap["data_seed"] == 7 and snap["n_examples"] == 1000
    first = out.read_bytes()
    assert run("gen-data", "--task", "bar", "--m", 2, "--n", 1000, "--seed", 7, "--out", out) == 0
    assert out.read_bytes() == first


def test_gen_data_bad_m(tmp_path, capsys):
    assert run("gen-data", "--task", "bar", "--m", 0, "--out", tmp_path / "x.csv") == 2
    assert "--m" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_gen_data_digits(tmp_path):
    out = tmp_path / "digits.csv"
    assert run("gen-data", "--task", "digits", "--out", out) == 0
    assert read_images_csv(out).shape == (360, 64)


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("gen-data", "--task", "bar", "--out", blocker / "sub" / "x.csv") == 1


def test_bad_flags_exit_nonzero():
    with pytest.raises(SystemExit) as info:
        run("train", "--preset", "no-such-preset", "--out", "x")
    assert info.value.code != 0


def test_presets_carry_paper_hyperparameters():
    doc = cli.preset_config("bar-patch", 1)
    t = doc["train"]
    assert (t["iterations"], t["eval_every"], t["fd_samples"], t["shots"]) == (350, 50, 1000, 3000)
    assert (t["lr_g"], t["lr_d"], t["minibatch"], t["seed"]) == (0.05, 0.001, 1, 1)
    assert doc["model"]["n_qubits"] == 3 and doc["model"]["n_layers"] == 3
    mmd = cli.preset_config("gaussian-mmd")["mmd"]
    assert (mmd["iterations"], mmd["lr"], mmd["n_layers"], mmd["shots"]) == (800, 0.01, 5, 3000)
    digits = cli.preset_config("digits-patch")["model"]
    assert (digits["n_patches"], digits["n_qubits"], digits["n_layers"]) == (4, 5, 5)
    with pytest.raises(cli.UsageError):
        cli.preset_config("nope")


def test_exact_flag_resolution(tmp_path):
    parser = cli.build_parser()
    args = parser.parse_args(["train", "--preset", "gaussian-mmd", "--exact", "--out", str(tmp_path)])
    doc = cli._resolve_train_doc(args)
    assert doc["mmd"]["shots"] is None and doc["mmd"]["iterations"] == 800
    args = parser.parse_args(["train", "--preset", "bar-patch", "--seed", "1", "--out", "x"])
    doc = cli._resolve_train_doc(args)
    assert doc["seed"] == 1 and doc["train"]["seed"] == 1 and doc["train"]["iterations"] == 350
    args = parser.parse_args(["train", "--preset", "bar-patch", "--exact", "--shots", "5", "--out", "x"])
    with pytest.raises(cli.UsageError):
        cli._resolve_train_doc(args)


def test_overrides():
    doc = cli.preset_config("bar-patch")
    cli.apply_override(doc, "train.lr_g=0.1")
    cli.apply_override(doc, "model.latent_active=[0]")
    assert doc["train"]["lr_g"] == 0.1 and doc["model"]["latent_active"] == [0]
    for bad in ("train.nonexistent=1", "nosection.key=1", "novalue"):
        with pytest.raises(cli.UsageError):
            cli.apply_override(doc, bad)


def test_train_digits_smoke(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("train", "--preset", "digits-patch", "--iterations", 5, "--exact", "--out", out) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["iterations"] == 5
    for rel in ("config.json", "records.csv", "checkpoints/final.json", "samples/samples.csv",
                "samples/sample_000.pgm"):
        assert (out / rel).exists()
    rows = list(csv.reader(open(out / "records.csv")))
    assert tuple(rows[0]) == RECORD_COLUMNS and len(rows) == 7
    assert read_pgm(out / "samples" / "sample_000.pgm").shape == (8, 8)
    ckpt = json.loads((out / "checkpoints" / "final.json").read_text())
    assert np.array(ckpt["theta"]).shape == (4, 5, 5) and ckpt["iteration"] == 5


@pytest.mark.parametrize("preset", ["bar-patch", "bar-batch", "bar-mlp", "bar-cnn"])
def test_rerun_from_snapshot_is_identical(tmp_path, preset):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train", "--preset", preset, "--iterations", 4, "--exact",
               "--set", "train.eval_every=2", "--set", "train.fd_samples=100", "--out", a) == 0
    assert run("train", "--config", a / "config.json", "--out", b) == 0
    assert (a / "records.csv").read_bytes() == (b / "records.csv").read_bytes()
    assert (a / "samples" / "samples.csv").read_bytes() == (b / "samples" / "samples.csv").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()


def test_train_mmd_outputs(tmp_path):
    out = tmp_path / "mmd"
    assert run("train", "--preset", "gaussian-mmd", "--iterations", 5, "--exact", "--out", out) == 0
    rows = list(csv.reader(open(out / "records.csv")))
    assert rows[0] == ["iteration", "mmd_loss", "tv", "seed"] and len(rows) == 6
    dist = list(csv.reader(open(out / "samples" / "distribution.csv")))
    assert dist[0] == ["x", "q", "target"] and len(dist) == 33


def test_train_with_dataset_file(tmp_path):
    data = tmp_path / "bars.csv"
    run("gen-data", "--task", "bar", "--n", 50, "--out", data)
    out = tmp_path / "run"
    assert run("train", "--preset", "bar-patch", "--iterations", 2, "--data", data,
               "--set", "train.eval_every=0", "--set", "n_samples=20", "--out", out) == 0
    assert read_images_csv(out / "samples" / "samples.csv").shape == (20, 4)


def test_train_abort_exit_code(tmp_path):
    out = tmp_path / "run"
    code = run("train", "--preset", "bar-patch", "--iterations", 3, "--exact",
               "--set", "train.postselect_floor=1.0", "--set", "train.fd_samples=50", "--out", out)
    assert code == 3
    assert (out / "records.csv").exists() and (out / "checkpoints" / "abort.json").exists()


def test_timing_flag(tmp_path):
    out = tmp_path / "run"
    run("train", "--preset", "bar-mlp", "--iterations", 2, "--timing",
        "--set", "train.fd_samples=20", "--out", out)
    rows = list(csv.DictReader(open(out / "records.csv")))
    assert rows[0]["elapsed_ms"] == "" and rows[1]["elapsed_ms"] != ""


def test_config_errors(tmp_path):
    assert run("train", "--out", tmp_path / "x") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 99}))
    assert run("train", "--config", bad, "--out", tmp_path / "x") == 2
    assert run("train", "--preset", "bar-patch", "--gen-params", 18, "--out", tmp_path / "x") == 2
    assert run("train", "--preset", "bar-mlp", "--gen-params", 11, "--iterations", 1,
               "--out", tmp_path / "x") == 2


def test_eval_fd(tmp_path, capsys):
    real = tmp_path / "real.csv"
    run("gen-data", "--task", "bar", "--n", 500, "--seed", 1, "--out", real)
    capsys.readouterr()
    assert run("eval-fd", real, real) == 0
    assert json.loads(capsys.readouterr().out)["fd"] == pytest.approx(0.0, abs=1e-9)
    uniform = tmp_path / "uniform.csv"
    np.savetxt(uniform, np.full((500, 4), 0.5), delimiter=",")
    assert run("eval-fd", real, uniform, "--chunks", 5) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["fd"] > 0 and len(report["chunk_fd"]) == 5
    box = report["box"]
    assert box["q1"] <= box["q2"] <= box["q3"]


def test_eval_fd_dimension_mismatch(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    np.savetxt(a, np.random.default_rng(0).random((10, 4)), delimiter=",")
    np.savetxt(b, np.random.default_rng(0).random((10, 3)), delimiter=",")
    assert run("eval-fd", a, b) == 2


def test_sweep_grid_defaults():
    lrs = {lr for lr, _ in cli.sweep_grid(False)}
    assert min(lrs) == 1e-4 and max(lrs) == 5e-3
    full = cli.sweep_grid(True)
    assert len(full) == 16 and {lr for lr, _ in full} >= {1e-4, 5e-3}


def test_sweep_smoke(tmp_path):
    out = tmp_path / "sweep"
    args = ["sweep", "--preset", "bar-mlp", "--lr", 1e-3, "--lr", 5e-3, "--momentum", 0.5,
            "--momentum", 0.9, "--iterations", 100, "--seed", 2, "--out", out]
    assert run(*args) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 4
    assert all(float(r["best_fd"]) <= float(r["final_fd"]) for r in rows)
    cell = out / "p18_lr0.001_m0.5"
    snaps = sorted(os.listdir(cell))
    assert len(snaps) == 3  # evaluations at 0, 50, 100
    first = (out / "sweep.csv").read_bytes()
    assert run(*args[:-1], tmp_path / "again", "--jobs", 2) == 0
    assert (tmp_path / "again" / "sweep.csv").read_bytes() == first


def test_sweep_top_k(tmp_path):
    out = tmp_path / "sweep"
    assert run("sweep", "--preset", "bar-cnn", "--lr", 5e-3, "--momentum", 0.9,
               "--iterations", 350, "--out", out) == 0
    cell = out / "p18_lr0.005_m0.9"
    snaps = sorted(os.listdir(cell))
    assert len(snaps) == cli.TOP_K
    fds = [json.loads((cell / s).read_text())["fd"] for s in snaps]
    assert fds == sorted(fds)
    row = next(csv.DictReader(open(out / "sweep.csv")))
    assert float(row["best_fd"]) == pytest.approx(fds[0])


def test_sweep_rejects_quantum_presets(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("sweep", "--preset", "bar-patch", "--out", tmp_path)
    assert info.value.code == 2


def test_classical_generator_sizes():
    from qganlab import classical

    rng = np.random.default_rng(0)
    assert {k: classical.MlpNetwork.init(v, rng).n_params for k, v in cli.MLP_SHAPES.items()} == \
        {10: 10, 18: 18, 60: 60}
    # noise dimension 1 or 2 cannot reach 10 or 18 exactly; the nearest sizes are used
    assert {k: classical.CnnGenerator.init(*v, rng).n_params for k, v in cli.CNN_SHAPES.items()} == \
        {10: 11, 18: 16, 57: 57}
