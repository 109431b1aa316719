import json
import subprocess
import sys

import numpy as np
import pytest

from graddistill.cli import main
from graddistill.graph import load_dataset, planted_graph, save_dataset

QUICK = ["--epochs", "15", "--hidden", "8", "--lr", "0.01"]


@pytest.fixture
def synth_dir(tmp_path):
    g = planted_graph(n_nodes=80, n_classes=2, n_dims=16, seed=0)
    return str(save_dataset(g, tmp_path / "synth"))


def test_train_kd_on_toy(toy_dir, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["train", "--data", str(toy_dir), "--strategy", "kd", "--out", str(out)] + QUICK) == 0
    res = json.loads(out.read_text())
    assert [s for s in ("teacher", "kd") if any(h["stage"] == s for h in res["history"])] == ["teacher", "kd"]
    assert "strategy=kd" in capsys.readouterr().out


def test_train_inductive_writes_accuracies(synth_dir, tmp_path, capsys):
    out = tmp_path / "r.json"
    args = ["train", "--data", synth_dir, "--strategy", "joint", "--alpha", "0.2", "--lambda", "20",
            "--inductive", "--rate", "0.5", "--out", str(out)] + QUICK
    assert main(args) == 0
    res = json.loads(out.read_text())
    assert res["tran_test"] is not None and res["ind_test"] is not None
    assert res["config"]["lam"] == 20.0
    line = capsys.readouterr().out.strip()
    assert line.startswith("strategy=joint tran=") and " ind=" in line


def test_train_output_is_deterministic(synth_dir, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["train", "--data", synth_dir, "--out", str(out), "--sampled"] + QUICK) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_from_environment(synth_dir, tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    monkeypatch.setenv("GRAD_SEED", "17")
    assert main(["train", "--data", synth_dir, "--out", str(out)] + QUICK) == 0
    assert json.loads(out.read_text())["config"]["seed"] == 17
    monkeypatch.setenv("GRAD_SEED", "x")
    assert main(["train", "--data", synth_dir, "--out", str(out)] + QUICK) == 1


def test_dataset_name_resolves_under_data_dir(synth_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("GRAD_DATA_DIR", str(tmp_path))
    assert main(["train", "--data", "synth", "--out", str(tmp_path / "r.json")] + QUICK) == 0


def test_checkpoint_then_evaluate(synth_dir, tmp_path, capsys):
    out, ckpt = tmp_path / "r.json", tmp_path / "student"
    assert main(["train", "--data", synth_dir, "--inductive", "--out", str(out),
                 "--save-params", str(ckpt)] + QUICK) == 0
    capsys.readouterr()
    assert main(["evaluate", "--data", synth_dir, "--params", str(ckpt), "--inductive"]) == 0
    ev = json.loads(capsys.readouterr().out)
    res = json.loads(out.read_text())
    assert ev["tran_acc"] == res["tran_test"] and ev["ind_acc"] == res["ind_test"]


def test_unknown_strategy_exits_1(synth_dir, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--data", synth_dir, "--strategy", "glnn"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_dataset_exits_1(tmp_path):
    assert main(["train", "--data", str(tmp_path / "nope")]) == 1


def test_rate_without_inductive_exits_1(synth_dir):
    assert main(["train", "--data", synth_dir, "--rate", "0.5"] + QUICK) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_2(synth_dir, tmp_path, capsys):
    code = main(["train", "--data", synth_dir, "--lr", "1e200", "--weight-decay", "0",
                 "--epochs", "10", "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_sweep_grid_has_four_rows(synth_dir, tmp_path):
    out = tmp_path / "grid.tsv"
    assert main(["sweep", "--data", synth_dir, "--grid", "alpha=0.2,0.4", "lambda=20,50",
                 "--out", str(out)] + QUICK) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "alpha\tlam\tval_acc\ttran_acc\tind_acc"
    assert len(lines) == 5


def test_sweep_rates_five_rows_per_strategy(synth_dir, tmp_path):
    out = tmp_path / "sweep.tsv"
    assert main(["sweep", "--data", synth_dir, "--rates", "10,25,50,75,90",
                 "--strategies", "joint,kd", "--out", str(out)] + QUICK) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "rate\tstrategy\tind_acc"
    rows = [ln.split("\t") for ln in lines[1:]]
    assert len(rows) == 10
    assert [r[0] for r in rows if r[1] == "joint"] == ["0.1", "0.25", "0.5", "0.75", "0.9"]


def test_sweep_empty_grid_exits_1(synth_dir):
    assert main(["sweep", "--data", synth_dir, "--grid"] + QUICK) == 1
    assert main(["sweep", "--data", synth_dir, "--grid", "alpha="] + QUICK) == 1
    assert main(["sweep", "--data", synth_dir] + QUICK) == 1


@pytest.mark.filterwarnings("ignore:.*no features")
def test_perturb_is_reproducible(synth_dir, tmp_path):
    a, b = tmp_path / "p1", tmp_path / "p2"
    for out in (a, b):
        assert main(["perturb", "--data", synth_dir, "--out", str(out), "--seed", "3"]) == 0
    for name in ("edges.tsv", "features.tsv", "labels.tsv", "splits.tsv", "meta.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    g, p = load_dataset(synth_dir), load_dataset(a)
    np.testing.assert_array_equal(g.features.to_dense()[:, :8], p.features.to_dense()[:, :8])
    assert p.meta["perturbed"] is True


def test_perturb_rejects_one_dimensional_features(toy_dir, tmp_path):
    (toy_dir / "features.tsv").write_text("0\t0\t1.0\n1\t0\t1.0\n2\t0\t1.0\n")
    (toy_dir / "meta.json").write_text(json.dumps({"n_nodes": 3, "n_dims": 1, "n_classes": 2}))
    assert main(["perturb", "--data", str(toy_dir), "--out", str(tmp_path / "p")]) == 1


def test_synth_and_module_entry_point(tmp_path):
    out = tmp_path / "s"
    proc = subprocess.run([sys.executable, "-m", "graddistill", "synth", "--out", str(out),
                           "--nodes", "200", "--seed", "1"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert load_dataset(out).n_nodes == 200
