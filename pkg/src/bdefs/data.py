"""Datasets: PGM image folders, feature CSVs, splits and synthetic generators."""

from __future__ import annotations

import csv
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_CLASS_NAMES = ("covid", "normal", "pneumonia")


@dataclass
class LabeledDataset:
    labels: np.ndarray
    class_names: list[str]
    images: np.ndarray | None = None        # (N, H, W, C) in [0, 1]
    features: np.ndarray | None = None      # (N, D)
    paths: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        k = len(self.class_names)
        if self.labels.size == 0:
            raise ValueError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= k:
            raise ValueError(f"labels must lie in 0..{k - 1}")
        for name in ("images", "features"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != self.labels.size:
                raise ValueError(f"{name} has {len(arr)} rows for {self.labels.size} labels")

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {name: int(c) for name, c in zip(self.class_names, counts)}


# -- PGM ----------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n)*(\S+)")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary (P5) PGM as a (H, W) uint8 array."""
    data = Path(path).read_bytes()
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0][:4]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise ValueError(f"{path}: unsupported PGM geometry or depth ({w}x{h}, max {maxval})")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise ValueError(f"{path}: raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w)


def write_pgm(path, img) -> None:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_images(root) -> LabeledDataset:
    """Load ``root/<class>/*.pgm``; labels follow lexicographic class-directory order."""
    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"{root}: no class subdirectories")
    images, labels, paths = [], [], []
    for k, name in enumerate(classes):
        files = sorted((root / name).glob("*.pgm"))
        if not files:
            raise ValueError(f"{root / name}: class directory has no .pgm files")
        for f in files:
            images.append(read_pgm(f))
            labels.append(k)
            paths.append(str(f))
    shapes = {}
    for img, p in zip(images, paths):
        shapes.setdefault(img.shape, []).append(p)
    if len(shapes) > 1:
        common = max(shapes, key=lambda s: len(shapes[s]))
        bad = [p for s, ps in shapes.items() if s != common for p in ps]
        raise ValueError(f"inconsistent image dimensions (expected {common}): {bad}")
    x = np.stack(images).astype(np.float64)[..., None] / 255.0
    return LabeledDataset(np.array(labels), classes, images=x, paths=paths)


def save_images(ds: LabeledDataset, root) -> None:
    root = Path(root)
    for k, name in enumerate(ds.class_names):
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, lab) in enumerate(zip(ds.images, ds.labels)):
        write_pgm(root / ds.class_names[lab] / f"img{i:05d}.pgm", img[..., 0])


# -- feature CSV ----------------------------------------------------------------

def save_features(ds: LabeledDataset, path) -> None:
    x = ds.features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(x.shape[1])] + ["label"])
        for row, lab in zip(x, ds.labels):
            w.writerow([f"{v:.17g}" for v in row] + [int(lab)])


def load_features(path, n_classes: int | None = None, class_names=None) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "label" not in header:
        raise ValueError(f"{path}: missing 'label' column")
    li = header.index("label")
    fcols = [j for j in range(len(header)) if j != li]
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        try:
            feats.append([float(row[j]) for j in fcols])
        except ValueError:
            bad = next(j for j in fcols if not _is_float(row[j]))
            raise ValueError(f"{path}: non-numeric cell at row {r}, column '{header[bad]}'") from None
        try:
            labels.append(int(row[li]))
        except ValueError:
            raise ValueError(f"{path}: non-integer label at row {r}") from None
    labels = np.array(labels, dtype=np.int64)
    if class_names is None:
        k = n_classes if n_classes is not None else max(
            len(DEFAULT_CLASS_NAMES), int(labels.max()) + 1 if labels.size else 0)
        class_names = list(DEFAULT_CLASS_NAMES[:k]) + [f"class{i}" for i in range(len(DEFAULT_CLASS_NAMES), k)]
    if labels.size and (labels.min() < 0 or labels.max() >= len(class_names)):
        raise ValueError(f"{path}: label out of range 0..{len(class_names) - 1}")
    x = np.array(feats, dtype=np.float64).reshape(len(feats), len(fcols))
    return LabeledDataset(labels, list(class_names), features=x, paths=[str(path)])


def _is_float(s) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


# -- splitting ------------------------------------------------------------------

@dataclass
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return self.train.size, self.validation.size, self.test.size


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_sizes(n: int, holdout: float = 0.15) -> tuple[int, int, int]:
    k = _round_half_up(holdout * n)
    return n - 2 * k, k, k


def split_data(n: int, seed: int, labels=None, stratified: bool = False,
               holdout: float = 0.15) -> SplitIndices:
    """70/15/15 split; validation and test get round(0.15 n) indices each.

    With ``stratified`` the permutation interleaves classes by within-class
    rank, so each split's class mix tracks the overall one while the split
    sizes stay exactly as above.
    """
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    n_train, n_val, n_test = split_sizes(n, holdout)
    rng = np.random.default_rng(seed)
    if stratified:
        if labels is None:
            raise ValueError("stratified split needs labels")
        labels = np.asarray(labels)
        keys = np.empty(n)
        for c in np.unique(labels):
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(idx.size)]
            keys[idx] = (np.arange(idx.size) + rng.random()) / idx.size
        perm = np.lexsort((rng.random(n), keys))
    else:
        perm = rng.permutation(n)
    test = np.sort(perm[:n_test])
    val = np.sort(perm[n_test:n_test + n_val])
    train = np.sort(perm[n_test + n_val:])
    return SplitIndices(train, val, test, seed)


# -- synthetic data ---------------------------------------------------------------

def _balanced_labels(n, k, rng):
    return rng.permutation(np.arange(n) % k)


def _signal_basis(m: int) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (m, 2) class-signal plane and (m, m-2) nuisance complement.

    The plane is the first Fourier pair over ``m`` points, so no coordinate
    is zero in both basis vectors.
    """
    j = np.arange(m)
    plane = np.stack([np.cos(2 * np.pi * j / m), np.sin(2 * np.pi * j / m)], axis=1)
    plane /= np.linalg.norm(plane, axis=0)
    # complete to an orthonormal basis; the trailing columns span the complement
    q, _ = np.linalg.qr(np.hstack([plane, np.eye(m)]))
    return q[:, :2] * np.sign(np.sum(q[:, :2] * plane, axis=0)), q[:, 2:m]


def synth_features(n=200, d=20, informative=5, noise=1.0, n_classes=3, separation=4.0,
                   nuisance=4.0, seed=0) -> LabeledDataset:
    """Gaussian classes whose means differ only on the first ``informative`` columns.

    Class means sit evenly on a circle in a 2-D plane of the informative
    block; on every informative column the largest gap between class means
    is at least ``separation`` (in units of ``noise``, or absolute when
    ``noise`` is 0). With three or more informative columns the block also
    carries a shared Gaussian nuisance of scale ``nuisance`` confined to the
    complement of that plane. The nuisance cancels only when every
    informative column is used, so each one is individually necessary and
    no single column looks informative on its own. Remaining columns are
    pure N(0, noise^2).
    """
    if informative > d:
        raise ValueError(f"informative count {informative} exceeds dimensionality {d}")
    if informative < 1 or n_classes < 2:
        raise ValueError("need at least one informative column and two classes")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, n_classes, rng)
    unit = noise if noise > 0 else 1.0
    m = informative
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    if m >= 2:
        plane, comp = _signal_basis(m)
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1) @ plane.T
    else:
        comp = np.zeros((1, 0))
        centers = np.cos(angles)[:, None]
    gaps = centers.max(axis=0) - centers.min(axis=0)
    means = np.zeros((n_classes, d))
    means[:, :m] = centers * (separation * unit / gaps.min())
    x = means[labels] + noise * rng.standard_normal((n, d))
    if comp.shape[1] and nuisance > 0:
        x[:, :m] += (nuisance * unit * rng.standard_normal((n, comp.shape[1]))) @ comp.T
    names = [*DEFAULT_CLASS_NAMES[:n_classes]] + [f"class{i}" for i in range(3, n_classes)]
    return LabeledDataset(labels, names, features=x)


def _pattern(k: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    kind = k % 4
    if kind == 0:     # filled disk
        m = (yy - cy) ** 2 + (xx - cx) ** 2 <= (0.3 * min(h, w)) ** 2
    elif kind == 1:   # cross
        m = (np.abs(yy - cy) <= h / 10) | (np.abs(xx - cx) <= w / 10)
    elif kind == 2:   # square outline
        r = 0.35 * min(h, w)
        inside = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
        inner = (np.abs(yy - cy) <= r - 2) & (np.abs(xx - cx) <= r - 2)
        m = inside & ~inner
    else:             # diagonal stripes
        m = ((yy + xx) // 3) % 2 == 0
    return m.astype(np.float64)


def synth_images(n=300, h=28, w=28, n_classes=3, noise=0.3, seed=0) -> LabeledDataset:
    """Class-specific geometric patterns, randomly shifted, plus Gaussian pixel noise."""
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, n_classes, rng)
    base = [_pattern(k, h, w) for k in range(n_classes)]
    imgs = np.empty((n, h, w, 1))
    for i, lab in enumerate(labels):
        dy, dx = rng.integers(-2, 3, size=2)
        img = np.roll(base[lab], (dy, dx), axis=(0, 1)) * rng.uniform(0.6, 1.0)
        img = img + noise * rng.standard_normal((h, w))
        imgs[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    names = [*DEFAULT_CLASS_NAMES[:n_classes]] + [f"class{i}" for i in range(3, n_classes)]
    return LabeledDataset(labels, names, images=imgs)


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
