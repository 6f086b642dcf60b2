import json
import subprocess
import sys

import numpy as np
import pytest

from jacgc import datagen as G
from jacgc.cli import main
from jacgc.model import load


def _gen_var(tmp_path, name="var", seed=0, length=120):
    out = tmp_path / name
    assert main(["generate", "var", "--dim", "3", "--lag", "2", "--parents", "1", "--length", str(length),
                 "--seed", str(seed), "--out", str(out)]) == 0
    return out


def _config(tmp_path, **kw):
    doc = {"dim": 3, "lag": 3, "hidden": 6, "lambda": 0.01, "epochs": 5, "batch_size": 40}
    doc.update(kw)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


def test_generate_var_writes_dataset_and_manifest(tmp_path):
    out = _gen_var(tmp_path)
    series, truth = G.read_dataset(out)
    assert series.values.shape == (120, 3) and truth.full.shape == (2, 3, 3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "generate" and manifest["seeds"] == [0]
    assert manifest["argv"][:2] == ["generate", "var"]
    assert "harness_defaults" in manifest


def test_generate_lorenz(tmp_path):
    out = tmp_path / "lor"
    assert main(["generate", "lorenz96", "--dim", "5", "--forcing", "10", "--length", "40", "--out", str(out),
                 "--burn-in", "50"]) == 0
    series, truth = G.read_dataset(out)
    assert series.values.shape == (40, 5) and truth.full.shape == (5, 5, 5)


def test_generate_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["generate", "var", "--dim", "3", "--length", "10"])
    assert exc.value.code == 2
    assert main(["generate", "var", "--dim", "3", "--length", "10", "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "lorenz96", "--dim", "5", "--length", "10", "--out", str(tmp_path / "y")]) == 2
    assert "requires --forcing" in capsys.readouterr().err


def test_train_analyze_eval_round_trip(tmp_path, capsys):
    data = _gen_var(tmp_path)
    cfg = _config(tmp_path)
    model = tmp_path / "m" / "model.jacgc.json"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(model)]) == 0
    params, mc, std = load(model)
    assert mc.dim == 3 and std is not None
    report = json.loads((model.parent / "report.json").read_text())
    assert len(report["train_loss"]) == 5
    causal = tmp_path / "causal.json"
    assert main(["analyze", "--model", str(model), "--data", str(data), "--out", str(causal)]) == 0
    doc = json.loads(causal.read_text())
    assert doc["dim"] == 3 and doc["lag"] == 3 and doc["aggregation"]["sample"] == "mean_abs"
    metrics = tmp_path / "metrics.json"
    capsys.readouterr()
    assert main(["eval", "--scores", str(causal), "--truth", str(data), "--full", "--out", str(metrics)]) == 0
    m = json.loads(metrics.read_text())
    assert m["level"] == "full" and 0.0 <= m["auroc"] <= 1.0 and m["n_pos"] + m["n_neg"] == 27
    assert json.loads(capsys.readouterr().out) == m


def test_eval_perfect_scores(tmp_path):
    data = _gen_var(tmp_path)
    _, truth = G.read_dataset(data)
    scores = {"format_version": 1, "dim": 3, "lag": 2, "summary": truth.summary.astype(float).tolist(),
              "full": truth.full.astype(float).tolist(), "aggregation": {"sample": "mean_abs", "lag": "max"}}
    path = tmp_path / "perfect.json"
    path.write_text(json.dumps(scores))
    out = tmp_path / "m.json"
    assert main(["eval", "--scores", str(path), "--truth", str(data), "--out", str(out)]) == 0
    m = json.loads(out.read_text())
    assert m["auroc"] == 1.0 and m["auprc"] == 1.0


def test_train_config_errors_exit_2(tmp_path, capsys):
    data = _gen_var(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dim": 3, "lag": 2, "momentum": 0.9}))
    assert main(["train", "--data", str(data), "--config", str(bad), "--out", str(tmp_path / "m.json")]) == 2
    assert "momentum" in capsys.readouterr().err
    wrong_dim = _config(tmp_path, dim=4)
    assert main(["train", "--data", str(data), "--config", str(wrong_dim), "--out", str(tmp_path / "m.json")]) == 2


def test_non_finite_training_exits_1(tmp_path, capsys):
    data = tmp_path / "huge"
    G.write_dataset(data, G.TimeSeries(np.random.default_rng(0).normal(size=(60, 3)) * 1e200))
    cfg = _config(tmp_path, standardize=False, epochs=2)
    with np.errstate(all="ignore"):
        rc = main(["train", "--data", str(data), "--config", str(cfg), "--out", str(tmp_path / "m.json")])
    assert rc == 1 and "non-finite loss" in capsys.readouterr().err


def test_analyze_dim_mismatch_exits_1(tmp_path):
    data = _gen_var(tmp_path)
    model = tmp_path / "model.jacgc.json"
    assert main(["train", "--data", str(data), "--config", str(_config(tmp_path, epochs=1)),
                 "--out", str(model)]) == 0
    other = tmp_path / "other"
    G.write_dataset(other, G.TimeSeries(np.ones((20, 2))))
    assert main(["analyze", "--model", str(model), "--data", str(other), "--out", str(tmp_path / "c.json")]) == 1


def test_missing_input_file_exits_1(tmp_path):
    assert main(["analyze", "--model", str(tmp_path / "none.json"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "c.json")]) == 1


def test_significance_needs_two_surrogates(tmp_path, capsys):
    data = _gen_var(tmp_path, length=300)
    cfg = _config(tmp_path)
    rc = main(["significance", "--data", str(data), "--config", str(cfg), "--surrogates", "1",
               "--out", str(tmp_path / "t.json")])
    assert rc == 2 and "at least 2" in capsys.readouterr().err


def test_significance_addressability_exits_2(tmp_path, capsys):
    data = _gen_var(tmp_path, length=120)
    rc = main(["significance", "--data", str(data), "--config", str(_config(tmp_path)), "--surrogates", "3",
               "--out", str(tmp_path / "t.json")])
    assert rc == 2 and "> T = 120" in capsys.readouterr().err


def test_significance_and_thresholded_eval(tmp_path):
    data = _gen_var(tmp_path, length=200)
    cfg = _config(tmp_path, epochs=3)
    thr = tmp_path / "thr.json"
    assert main(["significance", "--data", str(data), "--config", str(cfg), "--surrogates", "3",
                 "--segment", "60", "--shift", "20", "--out", str(thr)]) == 0
    doc = json.loads(thr.read_text())
    assert doc["num_surrogates"] == 3 and doc["k_sigma"] == 2.0
    model = tmp_path / "model.jacgc.json"
    assert main(["train", "--data", str(data), "--config", str(cfg), "--out", str(model)]) == 0
    causal = tmp_path / "causal.json"
    assert main(["analyze", "--model", str(model), "--data", str(data), "--out", str(causal)]) == 0
    out = tmp_path / "m.json"
    assert main(["eval", "--scores", str(causal), "--truth", str(data), "--thresholds", str(thr),
                 "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())["thresholded"]) >= {"f1", "precision", "recall"}


def test_replay_reproduces_train_bit_exactly(tmp_path):
    data = _gen_var(tmp_path)
    model = tmp_path / "model.jacgc.json"
    assert main(["train", "--data", str(data), "--config", str(_config(tmp_path)), "--out", str(model)]) == 0
    first = model.read_bytes()
    model.unlink()
    assert main(["replay", str(tmp_path / "model.jacgc.json.manifest.json")]) == 0
    assert model.read_bytes() == first


def test_bench_large_requires_flag(tmp_path, capsys):
    assert main(["bench", "var50", "--seeds", "1", "--out", str(tmp_path / "b")]) == 2
    assert "--full-scale" in capsys.readouterr().err


def test_bench_small_run(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "var10", "--seeds", "2", "--epochs", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == 2 and summary["config"]["epochs"] == 3
    assert (out / "summary.csv").read_text().startswith("level,auroc_mean")
    for k in range(2):
        assert (out / f"seed_{k}" / "model.jacgc.json").exists()
        assert (out / f"seed_{k}" / "metrics_full.json").exists()
    assert "benchmark var10 (2 seeds)" in capsys.readouterr().out


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jacgc", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("jacgc ")


def test_shipped_config_files_match_benchmarks():
    from pathlib import Path

    from jacgc.bench import BENCHMARKS
    from jacgc.training import load_run_config
    root = Path(__file__).resolve().parents[1] / "configs"
    for name, bench in BENCHMARKS.items():
        assert load_run_config(root / f"{name}.json") == bench.run_config
