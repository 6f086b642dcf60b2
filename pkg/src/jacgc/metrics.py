"""AUROC / AUPRC of causal scores against ground-truth graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .causal import CausalScores
from .datagen import GroundTruthGraph


class MetricError(ValueError):
    pass


def auroc(scores, labels) -> float:
    """P(random positive outranks random negative), ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(s)  # average ranks encode the 1/2 tie rule
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Area under the precision-recall step curve; tied scores form one block."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=bool).ravel()
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("AUPRC needs at least one positive label")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every block of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    n = ends + 1
    precision = tp / n
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


@dataclass
class Metrics:
    level: str
    auroc: float
    auprc: float
    n_pos: int
    n_neg: int
    diagonal: str = "include"
    runs: int = 1
    auroc_std: float = 0.0
    auprc_std: float = 0.0

    def to_document(self) -> dict:
        return {"level": self.level, "auroc": self.auroc, "auprc": self.auprc, "diagonal": self.diagonal,
                "runs": self.runs, "auroc_std": self.auroc_std, "auprc_std": self.auprc_std,
                "n_pos": self.n_pos, "n_neg": self.n_neg}


def pad_truth(full: np.ndarray, lag: int) -> np.ndarray:
    """Extend a tau x D x D truth with all-false slices up to ``lag``."""
    tau = full.shape[0]
    if tau > lag:
        if full[lag:].any():
            raise MetricError(f"truth has edges at lag > {lag}, beyond the scored lag depth")
        return full[:lag]
    if tau == lag:
        return full
    pad = np.zeros((lag - tau,) + full.shape[1:], dtype=bool)
    return np.concatenate([full, pad], axis=0)


def _flatten(scores: CausalScores, truth: GroundTruthGraph, level: str, diagonal: str):
    if level == "summary":
        s, t = scores.summary, truth.summary
        if s.shape != t.shape:
            raise MetricError(f"summary shape mismatch {s.shape} vs {t.shape}")
        if diagonal == "exclude":
            off = ~np.eye(s.shape[0], dtype=bool)
            return s[off], t[off]
        return s.ravel(), t.ravel()
    if level == "full":
        if scores.full.shape[1:] != truth.full.shape[1:]:
            raise MetricError(f"full shape mismatch {scores.full.shape} vs {truth.full.shape}")
        return scores.full.ravel(), pad_truth(truth.full, scores.lag).ravel()
    raise MetricError(f"unknown level {level!r}")


def score_graph(scores: CausalScores, truth: GroundTruthGraph, diagonal: str = "include",
                level: str = "summary") -> Metrics:
    if diagonal not in ("include", "exclude"):
        raise MetricError(f"unknown diagonal policy {diagonal!r}")
    s, t = _flatten(scores, truth, level, diagonal)
    return Metrics(level, auroc(s, t), auprc(s, t), int(t.sum()), int((~t).sum()), diagonal)


def aggregate(runs: Sequence[Metrics]) -> Metrics:
    """Mean and population std over runs."""
    if not runs:
        raise MetricError("aggregate needs at least one run")
    a = np.array([m.auroc for m in runs])
    p = np.array([m.auprc for m in runs])
    first = runs[0]
    return Metrics(first.level, float(a.mean()), float(p.mean()), first.n_pos, first.n_neg,
                   first.diagonal, len(runs), float(a.std()), float(p.std()))


def f1_score(pred: np.ndarray, truth: np.ndarray, diagonal: str = "include") -> dict:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if diagonal == "exclude":
        off = ~np.eye(pred.shape[0], dtype=bool)
        pred, truth = pred[off], truth[off]
    tp = int((pred & truth).sum())
    fp = int((pred & ~truth).sum())
    fn = int((~pred & truth).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 1.0
    return {"precision": precision, "recall": recall, "f1": f1, "tp": tp, "fp": fp, "fn": fn}
