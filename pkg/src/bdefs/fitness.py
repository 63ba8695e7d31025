"""Wrapper fitness: 1 - aggregate geometric mean of a one-vs-rest linear SVM."""

from __future__ import annotations

import logging

import numpy as np

from . import metrics
from .svm import SvmParams, train_ovr

log = logging.getLogger(__name__)

EMPTY_MASK_PENALTY = 1.0


class WrapperFitness:
    """Callable ``mask -> fitness`` over a fixed feature matrix and split.

    The SVM is trained on the training rows and scored on the validation
    rows; the test rows are never touched.
    """

    def __init__(self, features, labels, split, params: SvmParams = SvmParams(),
                 n_classes: int | None = None, backend: str | None = None):
        self.x = np.asarray(features, dtype=np.float64)
        self.y = np.asarray(labels, dtype=np.int64)
        self.k = int(n_classes) if n_classes is not None else int(self.y.max()) + 1
        self.params = params
        self.backend = backend
        self.x_train, self.y_train = self.x[split.train], self.y[split.train]
        self.x_val, self.y_val = self.x[split.validation], self.y[split.validation]
        self.d = self.x.shape[1]

    def __call__(self, mask) -> float:
        mask = np.asarray(mask).astype(bool)
        if mask.size != self.d:
            raise ValueError(f"mask length {mask.size} != feature count {self.d}")
        if not mask.any():
            return EMPTY_MASK_PENALTY
        model = train_ovr(self.x_train[:, mask], self.y_train, self.params, self.k,
                          self.backend)
        pred = model.predict(self.x_val[:, mask])
        cm = metrics.confusion_from_labels(self.y_val, pred, self.k)
        per_class = metrics.ovr_all(cm)
        try:
            for c in per_class:
                metrics.geometric_mean(c)
            gm = metrics.geometric_mean(metrics.aggregate_confusions(per_class))
        except metrics.UndefinedMetricError as exc:
            log.warning("fitness penalized: %s", exc)
            return EMPTY_MASK_PENALTY
        return min(max(1.0 - gm, 0.0), 1.0)


def wrapper_fitness(mask, features, labels, split, params: SvmParams = SvmParams(),
                    n_classes: int | None = None) -> float:
    return WrapperFitness(features, labels, split, params, n_classes)(mask)
