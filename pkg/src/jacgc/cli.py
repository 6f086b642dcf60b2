"""Command-line entry point: ``jacgc <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from . import datagen as G
from .bench import BENCHMARKS, format_table, run_benchmark, write_json, write_manifest
from .causal import (CausalScores, SignificanceConfig, SignificanceError, ThresholdMatrices, binarize,
                     extract_scores, significance_test)
from .metrics import MetricError, f1_score, score_graph
from .model import ModelFormatError, load, save
from .training import (ConfigError, Standardization, TrainingError, build_configs, load_run_config, train,
                       window)

log = logging.getLogger("jacgc")


class UsageError(Exception):
    pass


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def cmd_generate(args, argv):
    t0 = time.perf_counter()
    if args.system == "var":
        if args.lag is None:
            raise UsageError("generate var requires --lag")
        spec = G.var_random_coeffs(args.dim, args.lag, args.parents, args.coeff_low, args.coeff_high,
                                   seed=args.seed, noise_std=args.noise_std)
        series, truth = G.var_simulate(spec, args.length, seed=args.seed)
        config = {"system": "var", "dim": args.dim, "lag": args.lag, "parents_per_var": args.parents,
                  "coeff_low": args.coeff_low, "coeff_high": args.coeff_high, "noise_std": args.noise_std,
                  "length": args.length, "burn_in": G.VAR_BURN_IN}
    else:
        if args.forcing is None:
            raise UsageError("generate lorenz96 requires --forcing")
        spec = G.Lorenz96Spec(D=args.dim, F=args.forcing, dt=args.dt, subsample=args.subsample,
                              burn_in=args.burn_in, obs_noise_std=args.obs_noise)
        lag = args.lag if args.lag is not None else 5
        series, truth = G.lorenz96_simulate(spec, args.length, seed=args.seed, lag=lag)
        config = {"system": "lorenz96", "dim": args.dim, "forcing": args.forcing, "dt": args.dt,
                  "subsample": args.subsample, "burn_in": args.burn_in, "obs_noise_std": args.obs_noise,
                  "length": args.length, "truth_lag": lag}
    out = Path(args.out)
    G.write_dataset(out, series, truth)
    arts = [out / n for n in ("data.csv", "truth_summary.csv", "truth_full.csv")]
    write_manifest(out / "manifest.json", argv, "generate", config, [args.seed], arts,
                   {"total": round(time.perf_counter() - t0, 3)})


def _series(path):
    series, _ = G.read_dataset(path)
    return series


def cmd_train(args, argv):
    t0 = time.perf_counter()
    run = load_run_config(args.config)
    if args.seed is not None:
        run["seed"] = args.seed
    mc, tc = build_configs(run)
    series = _series(args.data)
    if series.D != mc.dim:
        raise ConfigError(f"data has {series.D} variables but config dim is {mc.dim}")
    params, report = train(series.values, mc, tc, log=log.info)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(out, params, mc, {"means": report.means, "stds": report.stds})
    report_path = Path(args.report) if args.report else out.with_name("report.json")
    write_json(report_path, report.to_dict())
    write_manifest(_manifest_path(out), argv, "train", run, [run["seed"]], [out, report_path],
                   {"total": round(time.perf_counter() - t0, 3)})


def cmd_analyze(args, argv):
    t0 = time.perf_counter()
    params, mc, std = load(args.model)
    series = _series(args.data)
    if series.D != mc.dim:
        raise RuntimeError(f"model expects {mc.dim} variables, data has {series.D}")
    if std is not None:
        data = window(Standardization(std["means"], std["stds"]).apply(series.values), mc.lag)
    else:
        data = window(series.values, mc.lag)
    scores = extract_scores(params, mc, data, sample_agg=args.sample_agg, lag_agg=args.lag_agg)
    out = Path(args.out)
    write_json(out, scores.to_document())
    write_manifest(_manifest_path(out), argv, "analyze",
                   {"model": str(args.model), "sample": args.sample_agg, "lag": args.lag_agg}, [], [out],
                   {"total": round(time.perf_counter() - t0, 3)})


def cmd_significance(args, argv):
    t0 = time.perf_counter()
    run = load_run_config(args.config)
    mc, tc = build_configs(run)
    series = _series(args.data)
    if series.D != mc.dim:
        raise ConfigError(f"data has {series.D} variables but config dim is {mc.dim}")
    sig = SignificanceConfig(args.surrogates, args.segment, args.shift, args.k_sigma, args.stride)
    sig.check(series.T, series.D)
    thr = significance_test(series.values, sig, mc, tc, parallel=args.parallel)
    out = Path(args.out)
    write_json(out, thr.to_document())
    write_manifest(_manifest_path(out), argv, "significance",
                   {**run, "surrogates": args.surrogates, "segment": args.segment, "shift": args.shift,
                    "k_sigma": args.k_sigma, "stride": sig.resolved_stride(series.T, series.D)},
                   [run["seed"]], [out], {"total": round(time.perf_counter() - t0, 3)})


def cmd_eval(args, argv):
    t0 = time.perf_counter()
    with open(args.scores) as fh:
        scores = CausalScores.from_document(json.load(fh))
    truth = G.read_truth(args.truth, scores.dim)
    if truth is None:
        raise RuntimeError(f"no truth files in {args.truth}")
    level = "full" if args.full else "summary"
    metrics = score_graph(scores, truth, args.diagonal, level)
    doc = metrics.to_document()
    if args.thresholds:
        with open(args.thresholds) as fh:
            thr = ThresholdMatrices.from_document(json.load(fh))
        summ, full = binarize(scores, thr)
        if level == "summary":
            doc["thresholded"] = f1_score(summ, truth.summary, args.diagonal)
        else:
            from .metrics import pad_truth
            doc["thresholded"] = f1_score(full.reshape(-1, 1), pad_truth(truth.full, scores.lag).reshape(-1, 1))
    out = Path(args.out)
    write_json(out, doc)
    write_manifest(_manifest_path(out), argv, "eval", {"level": level, "diagonal": args.diagonal}, [], [out],
                   {"total": round(time.perf_counter() - t0, 3)})
    print(json.dumps(doc))


def cmd_bench(args, argv):
    t0 = time.perf_counter()
    bench = BENCHMARKS[args.name]
    if bench.large and not args.full_scale:
        raise UsageError(f"benchmark {args.name} is hours-scale; pass --full-scale to run it")
    summary = run_benchmark(args.name, args.seeds, args.out, epochs=args.epochs, log=log.info,
                            full_scale=args.full_scale)
    timings = summary.pop("_timings")
    timings["total"] = round(time.perf_counter() - t0, 3)
    out = Path(args.out)
    arts = sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    write_manifest(out / "manifest.json", argv, "bench", summary["config"], list(range(args.seeds)), arts, timings)
    print(format_table(summary))


def cmd_replay(args, argv):
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    return main(manifest["argv"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jacgc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"jacgc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a benchmark dataset with ground truth")
    g.add_argument("system", choices=["var", "lorenz96"])
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--lag", type=int, help="VAR: true max lag; Lorenz-96: lag depth of the full-time truth")
    g.add_argument("--forcing", type=float)
    g.add_argument("--length", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--parents", type=int, default=2, help="VAR: random parents per variable")
    g.add_argument("--coeff-low", type=float, default=0.3)
    g.add_argument("--coeff-high", type=float, default=0.5)
    g.add_argument("--noise-std", type=float, default=1.0)
    g.add_argument("--dt", type=float, default=0.01)
    g.add_argument("--subsample", type=int, default=5)
    g.add_argument("--burn-in", type=int, default=1000)
    g.add_argument("--obs-noise", type=float, default=0.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the regularized forecaster")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", help="extract causal scores from a trained model")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--sample-agg", choices=["mean_abs", "rms"], default="mean_abs")
    a.add_argument("--lag-agg", choices=["max", "l2"], default="max")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("significance", help="surrogate-data thresholds")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--surrogates", type=int, default=50)
    s.add_argument("--shift", type=int, default=50)
    s.add_argument("--segment", type=int, default=100)
    s.add_argument("--k-sigma", type=float, default=2.0)
    s.add_argument("--stride", type=int)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_significance)

    e = sub.add_parser("eval", help="AUROC/AUPRC against ground truth")
    e.add_argument("--scores", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--full", action="store_true")
    e.add_argument("--diagonal", choices=["include", "exclude"], default="include")
    e.add_argument("--thresholds")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="reproduce a published benchmark row")
    b.add_argument("name", choices=sorted(BENCHMARKS))
    b.add_argument("--seeds", type=int, default=5)
    b.add_argument("--out", required=True)
    b.add_argument("--epochs", type=int, help="override the shipped epoch count")
    b.add_argument("--full-scale", action="store_true", help="allow hours-scale benchmarks")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="re-execute the command recorded in a manifest")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = args.func(args, argv)
    except (UsageError, ConfigError, SignificanceError) as exc:
        print(f"jacgc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, G.DataError, ModelFormatError, MetricError, RuntimeError, ValueError, OSError) as exc:
        print(f"jacgc {args.command}: {exc}", file=sys.stderr)
        return 1
    return rc or 0


if __name__ == "__main__":
    sys.exit(main())
