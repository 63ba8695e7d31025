"""Confusion-matrix metrics with one-vs-rest decomposition.

Counts are stored as floats throughout so that run-averaged confusion
matrices (with fractional entries) go through the same rate formulas.
Rates whose denominator is zero raise :class:`UndefinedMetricError`
instead of silently returning 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """A rate was requested whose denominator is zero."""


@dataclass(frozen=True)
class ClassConfusion:
    tp: float
    tn: float
    fp: float
    fn: float

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if not v >= 0:
                raise ValueError(f"{name} must be a nonnegative count, got {v!r}")

    @property
    def total(self) -> float:
        return self.tp + self.tn + self.fp + self.fn

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.tp, self.tn, self.fp, self.fn)


def confusion_from_labels(actual, predicted, k: int) -> np.ndarray:
    """K x K count matrix; entry (i, j) counts actual class i predicted as j."""
    actual = np.asarray(actual, dtype=np.int64).ravel()
    predicted = np.asarray(predicted, dtype=np.int64).ravel()
    if actual.shape != predicted.shape:
        raise ValueError(
            f"length mismatch: {actual.size} actual vs {predicted.size} predicted")
    if k < 1:
        raise ValueError("class count must be >= 1")
    for name, arr in (("actual", actual), ("predicted", predicted)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise ValueError(f"{name} label out of range 0..{k - 1}")
    m = np.zeros((k, k), dtype=np.float64)
    np.add.at(m, (actual, predicted), 1.0)
    return m


def ovr_decompose(m, class_index: int) -> ClassConfusion:
    m = np.asarray(m, dtype=np.float64)
    k = m.shape[0]
    if m.ndim != 2 or m.shape[1] != k:
        raise ValueError("confusion matrix must be square")
    if not 0 <= class_index < k:
        raise IndexError(f"class index {class_index} out of range for K={k}")
    tp = float(m[class_index, class_index])
    fn = float(m[class_index, :].sum()) - tp
    fp = float(m[:, class_index].sum()) - tp
    tn = float(m.sum()) - tp - fn - fp
    # float cancellation can leave tiny negatives on averaged matrices
    return ClassConfusion(tp, max(tn, 0.0), max(fp, 0.0), max(fn, 0.0))


def ovr_all(m) -> list[ClassConfusion]:
    m = np.asarray(m, dtype=np.float64)
    return [ovr_decompose(m, i) for i in range(m.shape[0])]


def _ratio(num: float, den: float, what: str) -> float:
    if den <= 0:
        raise UndefinedMetricError(f"{what} is undefined (zero denominator)")
    return num / den


def accuracy(c: ClassConfusion) -> float:
    return _ratio(c.tp + c.tn, c.total, "accuracy")


def sensitivity(c: ClassConfusion) -> float:
    return _ratio(c.tp, c.tp + c.fn, "sensitivity")


def specificity(c: ClassConfusion) -> float:
    return _ratio(c.tn, c.tn + c.fp, "specificity")


def geometric_mean(c: ClassConfusion) -> float:
    return math.sqrt(sensitivity(c) * specificity(c))


def aggregate_confusions(per_class: Sequence[ClassConfusion]) -> ClassConfusion:
    """Component-wise mean of one-vs-rest confusions (mean of counts, then rates)."""
    if len(per_class) == 0:
        raise ValueError("cannot aggregate an empty list of confusions")
    arr = np.array([c.as_tuple() for c in per_class], dtype=np.float64)
    return ClassConfusion(*(float(v) for v in arr.mean(axis=0)))


def auc_ovr(scores, is_positive) -> float:
    """ROC AUC as the Mann-Whitney statistic, ties credited 0.5.

    Uses midranks, so equal scores across the two groups count half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(is_positive, dtype=bool).ravel()
    if scores.shape != pos.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(s.size, dtype=np.float64)
    # midranks over runs of equal scores
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [s.size]))
    for a, b in zip(starts, ends):
        ranks[a:b] = 0.5 * (a + b - 1) + 1.0
    r = np.empty_like(ranks)
    r[order] = ranks
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairs(scores, is_positive) -> float:
    """Brute-force all-pairs AUC; reference for :func:`auc_ovr`."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = np.asarray(is_positive, dtype=bool).ravel()
    p, n = scores[pos], scores[~pos]
    if p.size == 0 or n.size == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    diff = p[:, None] - n[None, :]
    wins = np.count_nonzero(diff > 0) + 0.5 * np.count_nonzero(diff == 0)
    return float(wins / (p.size * n.size))


def rmse(scores, labels) -> float:
    """Root mean square error between scores and one-hot targets."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise ValueError(
            f"score matrix {scores.shape} does not match {labels.size} labels")
    if labels.size == 0:
        raise ValueError("rmse of an empty sample set is undefined")
    k = scores.shape[1]
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    onehot = np.eye(k)[labels]
    return float(np.sqrt(np.mean((onehot - scores) ** 2)))


def average_runs(matrices) -> np.ndarray:
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if not mats:
        raise ValueError("cannot average an empty list of matrices")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ValueError(f"shape mismatch: {m.shape} vs {shape}")
    return np.mean(np.stack(mats), axis=0)


@dataclass
class ClassMetrics:
    confusion: ClassConfusion
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    gmean: float | None
    auc: float | None = None


def _maybe(fn, c):
    try:
        return fn(c)
    except UndefinedMetricError:
        return None


def class_metrics(c: ClassConfusion, auc: float | None = None) -> ClassMetrics:
    return ClassMetrics(c, _maybe(accuracy, c), _maybe(sensitivity, c),
                        _maybe(specificity, c), _maybe(geometric_mean, c), auc)


@dataclass
class MetricReport:
    per_class: list[ClassMetrics]
    aggregate: ClassMetrics
    rmse: float | None = None


def metric_report(m, auc_per_class=None, rmse_value=None) -> MetricReport:
    """Per-class and mean-of-counts aggregate metrics for a K x K confusion.

    The aggregate AUC is the mean of the per-class AUCs that are defined.
    """
    per = ovr_all(m)
    aucs = list(auc_per_class) if auc_per_class is not None else [None] * len(per)
    per_class = [class_metrics(c, a) for c, a in zip(per, aucs)]
    defined = [a for a in aucs if a is not None]
    agg_auc = float(np.mean(defined)) if defined else None
    return MetricReport(per_class, class_metrics(aggregate_confusions(per), agg_auc),
                        rmse_value)
