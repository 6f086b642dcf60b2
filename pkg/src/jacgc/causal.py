"""Causal scores from learned Jacobians, and surrogate-data thresholds."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import Params, ResidualMlpConfig, batch_jacobian
from .training import TrainConfig, WindowedDataset, prepare, train

FORMAT_VERSION = 1
SAMPLE_AGGREGATIONS = ("mean_abs", "rms")
LAG_AGGREGATIONS = ("max", "l2")


class SignificanceError(ValueError):
    pass


@dataclass
class CausalScores:
    full: np.ndarray  # lag x D x D, full[a-1, i, j]: x_i at lag a -> x_j
    summary: np.ndarray  # D x D
    sample_agg: str = "mean_abs"
    lag_agg: str = "max"

    def __post_init__(self):
        self.full = np.asarray(self.full, dtype=np.float64)
        self.summary = np.asarray(self.summary, dtype=np.float64)
        assert np.all(self.full >= 0) and np.all(self.summary >= 0)
        if self.lag_agg == "max":
            assert np.array_equal(self.summary, self.full.max(axis=0))

    @property
    def lag(self) -> int:
        return self.full.shape[0]

    @property
    def dim(self) -> int:
        return self.full.shape[1]

    def to_document(self) -> dict:
        return {"format_version": FORMAT_VERSION, "dim": self.dim, "lag": self.lag,
                "summary": self.summary.tolist(), "full": self.full.tolist(),
                "aggregation": {"sample": self.sample_agg, "lag": self.lag_agg}}

    @classmethod
    def from_document(cls, doc: dict) -> "CausalScores":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported causal.json format_version {doc.get('format_version')!r}")
        full = np.asarray(doc["full"], dtype=np.float64)
        summary = np.asarray(doc["summary"], dtype=np.float64)
        if full.shape != (doc["lag"], doc["dim"], doc["dim"]) or summary.shape != (doc["dim"], doc["dim"]):
            raise ValueError("causal.json shapes disagree with dim/lag")
        agg = doc.get("aggregation", {})
        return cls(full, summary, agg.get("sample", "mean_abs"), agg.get("lag", "max"))


def jacobian_to_full(jac: np.ndarray, dim: int, lag: int) -> np.ndarray:
    """Rearrange a (..., D, D*lag) Jacobian into (..., lag, D_cause, D_effect)."""
    lead = jac.shape[:-2]
    # columns are i * lag + (lag - a); reshape to (..., j, i, lag - a)
    r = jac.reshape(lead + (dim, dim, lag))
    r = r[..., ::-1]  # now last axis index = a - 1
    return np.moveaxis(r, (-3, -2, -1), (-1, -2, -3)).copy()


def summarize(full: np.ndarray, lag_agg: str = "max") -> np.ndarray:
    if lag_agg == "max":
        return full.max(axis=0)
    if lag_agg == "l2":
        return np.sqrt((full ** 2).sum(axis=0))
    raise ValueError(f"unknown lag aggregation {lag_agg!r}")


def extract_scores(params: Params, config: ResidualMlpConfig, dataset: WindowedDataset,
                   sample_agg: str = "mean_abs", lag_agg: str = "max",
                   chunk: int = 1000) -> CausalScores:
    """Aggregate per-window Jacobians into full-time and summary scores."""
    if sample_agg not in SAMPLE_AGGREGATIONS:
        raise ValueError(f"unknown sample aggregation {sample_agg!r}")
    acc = np.zeros((config.dim, config.n_inputs))
    for start in range(0, dataset.M, chunk):
        jac = batch_jacobian(params, config, dataset.inputs[start:start + chunk])
        acc += np.abs(jac).sum(axis=0) if sample_agg == "mean_abs" else (jac ** 2).sum(axis=0)
    acc /= dataset.M
    if sample_agg == "rms":
        acc = np.sqrt(acc)
    full = jacobian_to_full(acc, config.dim, config.lag)
    return CausalScores(full, summarize(full, lag_agg), sample_agg, lag_agg)


def scores_for_series(params, config, values, lag, do_standardize, st=None, **kw) -> CausalScores:
    if st is not None:
        from .training import window
        data = window(st.apply(values), lag)
    else:
        data, _ = prepare(values, lag, do_standardize)
    return extract_scores(params, config, data, **kw)


# ---------------------------------------------------------------------------
# surrogate significance test


@dataclass(frozen=True)
class SignificanceConfig:
    num_surrogates: int = 50
    segment_length: int = 100
    shift: int = 50
    k_sigma: float = 2.0
    stride: Optional[int] = None  # None: tile the series evenly

    def resolved_stride(self, T: int, D: int) -> int:
        if self.stride is not None:
            return self.stride
        if self.num_surrogates <= 1:
            return 0
        room = T - self.segment_length - (D - 1) * self.shift
        return max(room // (self.num_surrogates - 1), 0)

    def check(self, T: int, D: int) -> None:
        if self.num_surrogates < 2:
            raise SignificanceError("need at least 2 surrogates")
        stride = self.resolved_stride(T, D)
        need = self.segment_length + (D - 1) * self.shift + (self.num_surrogates - 1) * stride
        if need > T:
            raise SignificanceError(
                f"surrogates not addressable: L + (D-1)*m + (N-1)*stride = {self.segment_length} + "
                f"{D - 1}*{self.shift} + {self.num_surrogates - 1}*{stride} = {need} > T = {T}")


def surrogate_generate(values: np.ndarray, cfg: SignificanceConfig, s: int) -> np.ndarray:
    """Column d of surrogate s is ``values[s*stride + d*m : ... + L, d]``."""
    values = np.asarray(values, dtype=np.float64)
    T, D = values.shape
    stride = cfg.resolved_stride(T, D)
    L, m = cfg.segment_length, cfg.shift
    out = np.empty((L, D))
    for d in range(D):
        start = s * stride + d * m
        if start < 0 or start + L > T:
            raise SignificanceError(f"surrogate {s}, column {d}: window [{start}, {start + L}) outside [0, {T})")
        out[:, d] = values[start:start + L, d]
    return out


@dataclass
class ThresholdMatrices:
    summary: np.ndarray
    full: np.ndarray
    k_sigma: float
    num_surrogates: int

    def to_document(self) -> dict:
        return {"format_version": FORMAT_VERSION, "dim": self.summary.shape[0], "lag": self.full.shape[0],
                "summary": self.summary.tolist(), "full": self.full.tolist(),
                "k_sigma": self.k_sigma, "num_surrogates": self.num_surrogates}

    @classmethod
    def from_document(cls, doc: dict) -> "ThresholdMatrices":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported thresholds.json format_version {doc.get('format_version')!r}")
        return cls(np.asarray(doc["summary"], dtype=np.float64), np.asarray(doc["full"], dtype=np.float64),
                   float(doc["k_sigma"]), int(doc["num_surrogates"]))


def significance_threshold(surrogate_scores: Sequence[CausalScores], k_sigma: float = 2.0) -> ThresholdMatrices:
    """Elementwise mean + k_sigma * population std over surrogates."""
    if len(surrogate_scores) < 2:
        raise SignificanceError("need at least 2 surrogate score sets")
    full = np.stack([s.full for s in surrogate_scores])
    summ = np.stack([s.summary for s in surrogate_scores])
    return ThresholdMatrices(summ.mean(axis=0) + k_sigma * summ.std(axis=0),
                             full.mean(axis=0) + k_sigma * full.std(axis=0),
                             k_sigma, len(surrogate_scores))


def binarize(scores: CausalScores, thresholds: ThresholdMatrices):
    """Edge iff score > threshold; returns ``(summary, full)`` boolean arrays."""
    if scores.summary.shape != thresholds.summary.shape or scores.full.shape != thresholds.full.shape:
        raise ValueError(f"score shapes {scores.summary.shape}/{scores.full.shape} do not match "
                         f"threshold shapes {thresholds.summary.shape}/{thresholds.full.shape}")
    return scores.summary > thresholds.summary, scores.full > thresholds.full


def surrogate_seed(base_seed: int, s: int) -> int:
    return int(np.random.SeedSequence([base_seed, s]).generate_state(1)[0])


def _surrogate_job(args):
    values, sig_cfg, s, model_config, train_cfg = args
    surr = surrogate_generate(values, sig_cfg, s)
    cfg = TrainConfig(**{**train_cfg.__dict__, "seed": surrogate_seed(train_cfg.seed, s)})
    params, _ = train(surr, model_config, cfg)
    return scores_for_series(params, model_config, surr, cfg.lag, cfg.standardize)


def max_workers(requested: int) -> int:
    cap = os.environ.get("JACGC_THREADS")
    if cap:
        requested = min(requested, max(1, int(cap)))
    return max(1, requested)


def surrogate_scores(values: np.ndarray, sig_cfg: SignificanceConfig, model_config: ResidualMlpConfig,
                     train_cfg: TrainConfig, parallel: int = 1) -> list[CausalScores]:
    """Retrain the same model on every surrogate; order of results is by index."""
    values = np.asarray(values, dtype=np.float64)
    sig_cfg.check(*values.shape)
    jobs = [(values, sig_cfg, s, model_config, train_cfg) for s in range(sig_cfg.num_surrogates)]
    workers = max_workers(parallel)
    if workers == 1:
        return [_surrogate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_surrogate_job, jobs))


def significance_test(values, sig_cfg, model_config, train_cfg, parallel: int = 1) -> ThresholdMatrices:
    return significance_threshold(surrogate_scores(values, sig_cfg, model_config, train_cfg, parallel),
                                  sig_cfg.k_sigma)
