"""Shipped benchmark configurations and the generate-train-analyze-eval runner."""

from __future__ import annotations

import csv
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import __version__
from . import datagen as G
from .causal import extract_scores
from .metrics import aggregate, score_graph
from .model import MODEL_SUFFIX, save
from .training import build_configs, parse_run_config, prepare, train


def write_json(path, doc) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh, indent=1, allow_nan=False)
        fh.write("\n")
    os.replace(tmp, path)


def write_manifest(path, argv, command, config, seeds, artifacts, timings) -> None:
    write_json(path, {
        "tool": "jacgc",
        "version": __version__,
        "argv": list(argv),
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "artifacts": sorted(str(a) for a in artifacts),
        "timings": timings,
        "harness_defaults": HARNESS_DEFAULTS,
    })


# settings chosen by this harness rather than taken from the published tuning tables
HARNESS_DEFAULTS = {
    "optimizer": "adam(0.9, 0.999, 1e-8)",
    "epochs": 2000,
    "batch_size": 100,
    "standardize": True,
    "val_fraction": 0.2,
    "init": "uniform(+-sqrt(1/fan_in)), zero bias",
    "lorenz_lag": 5,
}


@dataclass(frozen=True)
class Benchmark:
    name: str
    kind: str  # "var" or "lorenz96"
    dim: int
    length: int
    lag: int  # maximum estimated lag
    run_config: dict
    true_lag: int = 0  # VAR only
    forcing: float = 0.0  # Lorenz only
    compare_unregularized: bool = False
    large: bool = False
    gen_options: dict = field(default_factory=dict)

    def generate(self, seed: int):
        if self.kind == "var":
            spec = G.var_random_coeffs(self.dim, self.true_lag, seed=seed, **self.gen_options)
            return G.var_simulate(spec, self.length, seed=seed)
        spec = G.Lorenz96Spec(D=self.dim, F=self.forcing, **self.gen_options)
        return G.lorenz96_simulate(spec, self.length, seed=seed, lag=self.lag)


def _cfg(dim, lag, hidden, dropout, n_residual, lam, lr):
    return {"dim": dim, "lag": lag, "hidden": hidden, "n_residual": n_residual, "dropout": dropout,
            "activation": "relu", "regularizer": "fro_random_projection", "lambda": lam, "n_proj": 1,
            "lr": lr, "epochs": 2000, "batch_size": 100, "seed": 0, "standardize": True,
            "val_fraction": 0.2}


# per-benchmark hidden width, dropout, residual depth, lambda and learning rate
BENCHMARKS = {
    "var10": Benchmark("var10", "var", dim=10, length=600, lag=5, true_lag=3,
                       run_config=_cfg(10, 5, 50, 0.0, 0, 0.01, 1e-3)),
    "var50": Benchmark("var50", "var", dim=50, length=600, lag=10, true_lag=5, large=True,
                       run_config=_cfg(50, 10, 50, 0.2, 5, 1e-4, 1e-3)),
    "lorenz10": Benchmark("lorenz10", "lorenz96", dim=10, length=500, lag=5, forcing=10.0,
                          run_config=_cfg(10, 5, 100, 0.2, 5, 1e-4, 1e-3)),
    "lorenz40": Benchmark("lorenz40", "lorenz96", dim=10, length=500, lag=5, forcing=40.0,
                          compare_unregularized=True,
                          run_config=_cfg(10, 5, 100, 0.2, 5, 0.2, 1e-5)),
}


def shipped_config(name: str) -> dict:
    return dict(BENCHMARKS[name].run_config)


def _metric_rows(per_level: dict) -> list[list]:
    rows = []
    for level, m in per_level.items():
        rows.append([level, f"{m.auroc:.4f}", f"{m.auroc_std:.4f}", f"{m.auprc:.4f}", f"{m.auprc_std:.4f}", m.runs])
    return rows


def run_one(bench: Benchmark, seed: int, out_dir: Path, run_config: dict, log=None) -> dict:
    """Single seed: writes dataset, model, report, scores and metrics into ``out_dir``."""
    series, truth = bench.generate(seed)
    G.write_dataset(out_dir, series, truth)
    result = {"seed": seed}
    variants = [("", run_config)]
    if bench.compare_unregularized:
        variants.append(("_nojr", {**run_config, "lambda": 0.0}))
    for suffix, rc in variants:
        mc, tc = build_configs({**rc, "seed": seed})
        params, report = train(series.values, mc, tc, log=log)
        data, st = prepare(series.values, tc.lag, tc.standardize)
        save(out_dir / f"model{suffix}{MODEL_SUFFIX}", params, mc, st.as_dict())
        write_json(out_dir / f"report{suffix}.json", report.to_dict())
        scores = extract_scores(params, mc, data)
        write_json(out_dir / f"causal{suffix}.json", scores.to_document())
        entry = {"train_loss": report.train_loss[-1], "train_mse": report.train_mse[-1],
                 "test_loss": report.val_loss[-1] if report.val_loss else None,
                 "test_mse_original": report.val_mse_original[-1] if report.val_mse_original else None}
        for level in ("summary", "full"):
            m = score_graph(scores, truth, "include", level)
            write_json(out_dir / f"metrics{suffix}_{level}.json", m.to_document())
            entry[level] = m
        result["jr" if not suffix else "nojr"] = entry
    return result


def run_benchmark(name: str, seeds: int, out, epochs: Optional[int] = None, log: Optional[Callable] = None,
                  full_scale: bool = False) -> dict:
    bench = BENCHMARKS[name]
    if bench.large and not full_scale:
        raise ValueError(f"benchmark {name} is hours-scale; pass --full-scale to run it")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rc = shipped_config(name)
    if epochs is not None:
        rc["epochs"] = int(epochs)
    parse_run_config(rc)
    results, timings = [], {}
    for seed in range(seeds):
        t0 = time.perf_counter()
        try:
            results.append(run_one(bench, seed, out / f"seed_{seed}", rc, log=log))
        except Exception as exc:
            raise RuntimeError(f"benchmark {name} failed at seed {seed}: {exc}") from exc
        timings[f"seed_{seed}"] = round(time.perf_counter() - t0, 3)
        if log:
            log(f"{name} seed {seed}: summary AUROC {results[-1]['jr']['summary'].auroc:.4f}, "
                f"full AUROC {results[-1]['jr']['full'].auroc:.4f}")

    agg = {level: aggregate([r["jr"][level] for r in results]) for level in ("summary", "full")}
    summary = {
        "benchmark": name,
        "seeds": seeds,
        "config": rc,
        "aggregate": {level: m.to_document() for level, m in agg.items()},
        "per_seed": [
            {"seed": r["seed"], **{level: {"auroc": r["jr"][level].auroc, "auprc": r["jr"][level].auprc}
                                   for level in ("summary", "full")}}
            for r in results
        ],
    }
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "auroc_mean", "auroc_std", "auprc_mean", "auprc_std", "runs"])
        w.writerows(_metric_rows(agg))
    if bench.compare_unregularized:
        rows = []
        for r in results:
            for tag in ("jr", "nojr"):
                e = r[tag]
                rows.append({"seed": r["seed"], "model": "regularized" if tag == "jr" else "unregularized",
                             "train_loss": e["train_loss"], "test_loss": e["test_loss"],
                             "test_mse_original": e["test_mse_original"]})
        summary["overfitting"] = rows
        wins = sum(1 for r in results
                   if r["jr"]["test_loss"] < r["nojr"]["test_loss"]
                   and r["jr"]["test_mse_original"] < r["nojr"]["test_mse_original"])
        summary["regularizer_wins"] = wins
        with open(out / "overfitting.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in row.items()})
    write_json(out / "summary.json", summary)
    summary["_timings"] = timings
    return summary


def format_table(summary: dict) -> str:
    lines = [f"benchmark {summary['benchmark']} ({summary['seeds']} seeds)",
             f"{'level':<8} {'AUROC':>16} {'AUPRC':>16}"]
    for level, m in summary["aggregate"].items():
        lines.append(f"{level:<8} {m['auroc']:.3f} +- {m['auroc_std']:.3f}   {m['auprc']:.3f} +- {m['auprc_std']:.3f}")
    if "overfitting" in summary:
        lines.append(f"{'seed':<5} {'model':<13} {'train loss':>11} {'test loss':>10} {'MSE':>8}")
        for row in summary["overfitting"]:
            lines.append(f"{row['seed']:<5} {row['model']:<13} {row['train_loss']:>11.4f} "
                         f"{row['test_loss']:>10.4f} {row['test_mse_original']:>8.4f}")
    return "\n".join(lines)
