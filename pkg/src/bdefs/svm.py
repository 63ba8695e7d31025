"""Linear SVM trained one-vs-rest by dual coordinate descent.

The bias is folded in as a constant feature, so it is regularized along
with the weights. Features are standardized with statistics from the
training matrix before any binary problem is solved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend


@dataclass(frozen=True)
class SvmParams:
    C: float = 1.0
    tol: float = 1e-4
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not (self.C > 0 and self.tol > 0 and self.max_epochs > 0):
            raise ValueError("C, tol and max_epochs must be positive")


@dataclass
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @property
    def n_features(self) -> int:
        return self.mean.size

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"expected {self.n_features} features, got shape {x.shape}")
        return (x - self.mean) / self.scale

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean


def fit_standardizer(x) -> Standardizer:
    """Column means and population standard deviations (0 -> 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("cannot fit a standardizer on an empty matrix")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[~(scale > 1e-12 * np.maximum(1.0, np.abs(mean)))] = 1.0
    return Standardizer(mean, scale)


def standardize(s: Standardizer, x) -> np.ndarray:
    return s.transform(x)


@dataclass
class BinaryFit:
    weights: np.ndarray
    bias: float
    objectives: np.ndarray          # kept-iterate primal objective per epoch
    raw_objectives: np.ndarray      # running-iterate primal objective per epoch
    epochs: int
    converged: bool


def train_binary(x, y, p: SvmParams = SvmParams(), backend: str | None = None) -> BinaryFit:
    """Minimize 0.5*|w|^2 + C * sum(hinge) for labels in {-1, +1}.

    Coordinates are visited in one seeded permutation, fixed for all epochs.
    The returned iterate is the one with the lowest primal objective seen.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0] if x.ndim == 2 else '?'} rows vs {y.size} labels")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("binary training needs both label signs")
    xa = np.ascontiguousarray(np.hstack([x, np.ones((x.shape[0], 1))]))
    order = np.random.default_rng(p.seed).permutation(x.shape[0]).astype(np.int64)
    dual_cd = _backend.kernels(backend)
    w, obj, raw, epochs, conv = dual_cd(xa, y, float(p.C), float(p.tol),
                                        int(p.max_epochs), order)
    w = np.asarray(w)
    return BinaryFit(w[:-1].copy(), float(w[-1]), np.asarray(obj), np.asarray(raw),
                     int(epochs), bool(conv))


@dataclass
class SvmModel:
    weights: np.ndarray             # (K, D)
    biases: np.ndarray              # (K,)
    standardizer: Standardizer
    fits: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_scores(self, x) -> np.ndarray:
        return decision_scores(self, x)

    def predict(self, x) -> np.ndarray:
        return predict(self, x)

    def to_text(self) -> str:
        k, d = self.weights.shape
        lines = [f"svm v1 {k} {d}"]
        for wk, bk in zip(self.weights, self.biases):
            lines.append(" ".join(f"{v:.17g}" for v in (*wk, bk)))
        lines.append(" ".join(f"{v:.17g}" for v in self.standardizer.mean))
        lines.append(" ".join(f"{v:.17g}" for v in self.standardizer.scale))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SvmModel":
        lines = text.splitlines()
        head = lines[0].split() if lines else []
        if len(head) != 4 or head[:2] != ["svm", "v1"]:
            raise ValueError("not an 'svm v1' model file")
        k, d = int(head[2]), int(head[3])
        if len(lines) < k + 3:
            raise ValueError("truncated svm model file")
        rows = [np.array([float(v) for v in ln.split()]) for ln in lines[1:k + 1]]
        if any(r.size != d + 1 for r in rows):
            raise ValueError("weight line has wrong length")
        w = np.vstack(rows)

        def vec(ln):
            v = np.array([float(t) for t in ln.split()], dtype=np.float64)
            if v.size != d:
                raise ValueError("standardizer line has wrong length")
            return v

        std = Standardizer(vec(lines[k + 1]), vec(lines[k + 2]))
        return cls(w[:, :d].copy(), w[:, d].copy(), std)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SvmModel":
        with open(path) as fh:
            return cls.from_text(fh.read())


def train_ovr(x, labels, p: SvmParams = SvmParams(), n_classes: int | None = None,
              backend: str | None = None) -> SvmModel:
    """One binary problem per class (class k against the rest).

    A class with no training samples gets a zero weight vector and bias -1,
    so it is never predicted over a trained class unless all scores tie low.
    """
    # fixed memory layout keeps reductions (and hence models) bit-identical
    x = np.ascontiguousarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("one-vs-rest training needs at least 2 distinct classes")
    k = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    std = fit_standardizer(x)
    z = std.transform(x)
    weights = np.zeros((k, x.shape[1]))
    biases = np.full(k, -1.0)
    fits = []
    for c in range(k):
        if c not in present:
            fits.append(None)
            continue
        y = np.where(labels == c, 1.0, -1.0)
        f = train_binary(z, y, p, backend)
        weights[c], biases[c] = f.weights, f.bias
        fits.append(f)
    return SvmModel(weights, biases, std, fits)


def decision_scores(m: SvmModel, x) -> np.ndarray:
    z = m.standardizer.transform(x)
    return z @ m.weights.T + m.biases


def predict(m: SvmModel, x) -> np.ndarray:
    # argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(decision_scores(m, x), axis=1)
