"""End-to-end runs: split, (extract,) select with BDE, score, average, report."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import convnet, de, metrics
from .data import LabeledDataset, SplitIndices, ensure_dir, split_data
from .fitness import EMPTY_MASK_PENALTY, WrapperFitness
from .svm import SvmParams, train_ovr

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test", "total")
METHODS = ("original", "selected")


@dataclass
class PipelineConfig:
    features: str | None = None
    images: str | None = None
    seed: int = 0
    runs: int = 100
    pop_size: int = 20
    generations: int = 100
    cr: float = 1.0
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    gamma: float = 1e-4
    dropout: float = 0.5
    hidden: int = 400
    filters: int = 8
    svm_c: float = 1.0
    svm_tol: float = 1e-4
    svm_max_epochs: int = 1000
    stratified: bool = False
    retrain_extractor: bool = False
    empty_mask_penalty: float = EMPTY_MASK_PENALTY

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.empty_mask_penalty != EMPTY_MASK_PENALTY:
            raise ValueError("the empty-mask penalty is fixed at 1.0")

    def de_config(self, seed) -> de.DeConfig:
        return de.DeConfig(self.pop_size, self.generations, self.cr, seed)

    def svm_params(self, seed) -> SvmParams:
        return SvmParams(self.svm_c, self.svm_tol, self.svm_max_epochs, seed)

    def train_config(self, seed) -> convnet.TrainConfig:
        return convnet.TrainConfig(self.epochs, self.batch_size, self.lr, gamma=self.gamma,
                                   dropout=self.dropout, seed=seed)


def _coerce(value: str, typ):
    if typ is bool:
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return typ(value)


_FIELD_TYPES = {"int": int, "float": float, "bool": bool, "str | None": str}


def read_config(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into typed config overrides."""
    parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    with open(path) as fh:
        parser.read_string("[pipeline]\n" + fh.read())
    types = {f.name: _FIELD_TYPES[f.type] if isinstance(f.type, str) else f.type
             for f in dataclasses.fields(PipelineConfig)}
    out = {}
    for key, value in parser["pipeline"].items():
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"{path}: unknown config key '{key}'")
        out[key] = _coerce(value, types[key])
    return out


# -- one run ------------------------------------------------------------------

@dataclass
class SplitScores:
    confusion: np.ndarray
    auc: list            # per class, None where undefined
    rmse: float


@dataclass
class RunResult:
    run: int
    seed: int
    mask: np.ndarray
    best_fitness: float
    history: de.RunHistory
    scores: dict          # (method, split) -> SplitScores


def class_scores(decision: np.ndarray) -> np.ndarray:
    """Softmax of one-vs-rest decision values: rows in [0, 1] summing to 1."""
    return convnet.softmax(decision)


def score_split(model, x, y, k) -> SplitScores:
    dec = model.decision_scores(x)
    pred = np.argmax(dec, axis=1)
    cm = metrics.confusion_from_labels(y, pred, k)
    aucs = []
    for c in range(k):
        try:
            aucs.append(metrics.auc_ovr(dec[:, c], y == c))
        except metrics.UndefinedMetricError:
            aucs.append(None)
    return SplitScores(cm, aucs, metrics.rmse(class_scores(dec), y))


def evaluate_mask(features, labels, split: SplitIndices, mask, params: SvmParams, k):
    """Train on the train rows over ``mask`` and score every split (plus their union)."""
    cols = np.asarray(mask).astype(bool)
    x = np.asarray(features)[:, cols]
    y = np.asarray(labels)
    model = train_ovr(x[split.train], y[split.train], params, k)
    out = {}
    parts = {"train": split.train, "validation": split.validation, "test": split.test}
    for name, idx in parts.items():
        out[name] = score_split(model, x[idx], y[idx], k)
    allidx = np.concatenate([split.train, split.validation, split.test])
    total = score_split(model, x[allidx], y[allidx], k)
    # total confusion is the sum of the split confusions by construction
    out["total"] = total
    return model, out


def select_features(features, labels, split, cfg: PipelineConfig, seed: int, k: int,
                    map_fn=map):
    fit = WrapperFitness(features, labels, split, cfg.svm_params(seed), k)
    return de.run(cfg.de_config(seed), fit.d, fit, map_fn=map_fn)


def train_extractor(ds: LabeledDataset, split: SplitIndices, cfg: PipelineConfig, seed: int):
    model = convnet.init_model(ds.images.shape[1:], ds.n_classes, cfg.filters, 3,
                               cfg.hidden, cfg.dropout, seed)
    return convnet.train(model, ds.images[split.train], ds.labels[split.train],
                         ds.images[split.validation], ds.labels[split.validation],
                         cfg.train_config(seed))


def run_once(features, labels, cfg: PipelineConfig, run: int, k: int, split=None) -> RunResult:
    seed = cfg.seed + run
    if split is None:
        split = split_data(len(labels), seed, labels, cfg.stratified)
    mask, best, hist = select_features(features, labels, split, cfg, seed, k)
    params = cfg.svm_params(seed)
    scores = {}
    full = np.ones(features.shape[1], dtype=np.uint8)
    for method, m in (("original", full), ("selected", mask)):
        if not m.any():
            raise ValueError("selected mask is empty")
        _, per_split = evaluate_mask(features, labels, split, m, params, k)
        for s, v in per_split.items():
            scores[(method, s)] = v
    return RunResult(run, seed, mask, best, hist, scores)


# -- aggregation ----------------------------------------------------------------

@dataclass
class ReportBundle:
    class_names: list
    config: dict
    runs: list = field(default_factory=list)          # RunResult, in run order
    failures: list = field(default_factory=list)      # {"run", "stage", "error"}
    train_history: convnet.TrainHistory | None = None
    n_features: int = 0

    def averaged_confusion(self, method, split) -> np.ndarray:
        return metrics.average_runs([r.scores[(method, split)].confusion for r in self.runs])

    def mean_auc(self, method, split) -> list:
        k = len(self.class_names)
        out = []
        for c in range(k):
            vals = [r.scores[(method, split)].auc[c] for r in self.runs]
            vals = [v for v in vals if v is not None]
            out.append(float(np.mean(vals)) if vals else None)
        return out

    def mean_rmse(self, method, split) -> float:
        return float(np.mean([r.scores[(method, split)].rmse for r in self.runs]))

    def selected_counts(self) -> list:
        return [int(r.mask.sum()) for r in self.runs]


def run_pipeline(cfg: PipelineConfig, ds: LabeledDataset, progress=None) -> ReportBundle:
    """Full protocol: ``cfg.runs`` independent runs, run ``r`` seeded with ``seed + r``."""
    k = ds.n_classes
    bundle = ReportBundle(list(ds.class_names), _public_config(cfg))
    features = ds.features
    if features is None:
        if ds.images is None:
            raise ValueError("dataset has neither features nor images")
        if not cfg.retrain_extractor:
            split = split_data(ds.n, cfg.seed + 1, ds.labels, cfg.stratified)
            model, hist = train_extractor(ds, split, cfg, cfg.seed)
            bundle.train_history = hist
            features = convnet.extract_features(model, ds.images)
    for r in range(1, cfg.runs + 1):
        seed = cfg.seed + r
        stage = "split"
        try:
            split = split_data(ds.n, seed, ds.labels, cfg.stratified)
            feats = features
            if feats is None:
                stage = "extract"
                model, hist = train_extractor(ds, split, cfg, seed)
                if bundle.train_history is None:
                    bundle.train_history = hist
                feats = convnet.extract_features(model, ds.images)
            stage = "select"
            res = run_once(feats, ds.labels, cfg, r, k, split)
        except Exception as exc:  # recorded, the remaining runs still execute
            log.error("run %d failed at %s: %s", r, stage, exc)
            bundle.failures.append({"run": r, "stage": stage, "error": str(exc)})
            continue
        bundle.runs.append(res)
        bundle.n_features = feats.shape[1]
        if progress:
            progress(r, res)
    return bundle


def _public_config(cfg: PipelineConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for key in ("features", "images"):
        if d[key] is not None:
            d[key] = Path(d[key]).name
    return d


# -- reports ---------------------------------------------------------------------

def fmt(v) -> str:
    return "NA" if v is None else f"{v:.4f}"


def _rounded(m: np.ndarray) -> np.ndarray:
    return np.array([[float(f"{v:.4f}") for v in row] for row in m])


def _header(names) -> str:
    return "# classes: " + " ".join(f"{i}={n}" for i, n in enumerate(names))


def _metric_dict(cm: metrics.ClassMetrics) -> dict:
    c = cm.confusion
    return {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn, "accuracy": cm.accuracy,
            "sensitivity": cm.sensitivity, "specificity": cm.specificity,
            "gmean": cm.gmean, "auc": cm.auc}


def _round4(obj):
    if isinstance(obj, float):
        return float(f"{obj:.4f}")
    if isinstance(obj, dict):
        return {k: _round4(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_round4(v) for v in obj]
    return obj


def build_reports(bundle: ReportBundle) -> dict:
    """Metric reports keyed by (method, split).

    Rates are computed from the averaged confusion rounded to the 4 decimals
    that are written out, so the emitted files are self-consistent.
    """
    out = {}
    if not bundle.runs:
        return out
    for method in METHODS:
        for split in SPLITS:
            cm = _rounded(bundle.averaged_confusion(method, split))
            rep = metrics.metric_report(cm, bundle.mean_auc(method, split),
                                        bundle.mean_rmse(method, split))
            out[(method, split)] = (cm, rep)
    return out


def emit_reports(bundle: ReportBundle, out_dir) -> list[Path]:
    out = ensure_dir(out_dir)
    names = bundle.class_names
    written = []
    reports = build_reports(bundle)

    def path(name):
        p = out / name
        written.append(p)
        return p

    for (method, split), (cm, rep) in reports.items():
        with open(path(f"confusion_{split}_{method}.csv"), "w", newline="") as fh:
            fh.write(_header(names) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["actual\\predicted", *names])
            for name, row in zip(names, cm):
                w.writerow([name, *(fmt(v) for v in row)])

    cols = ["tp", "tn", "fp", "fn", "accuracy", "sensitivity", "specificity", "gmean", "auc"]
    with open(path("metrics_per_class.csv"), "w", newline="") as fh:
        fh.write(_header(names) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "split", "class", *cols])
        for (method, split), (_, rep) in reports.items():
            for name, cmx in zip(names, rep.per_class):
                d = _metric_dict(cmx)
                w.writerow([method, split, name, *(fmt(d[c]) for c in cols)])

    summary = {
        "class_names": names,
        "labels": {str(i): n for i, n in enumerate(names)},
        "runs_requested": bundle.config.get("runs"),
        "runs_completed": [r.run for r in bundle.runs],
        "failures": bundle.failures,
        "config": bundle.config,
        "n_features": bundle.n_features,
        "methods": {},
    }
    with open(path("metrics_summary.csv"), "w", newline="") as fh:
        fh.write(_header(names) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "split", *cols, "rmse"])
        for (method, split), (_, rep) in reports.items():
            d = _metric_dict(rep.aggregate)
            w.writerow([method, split, *(fmt(d[c]) for c in cols), fmt(rep.rmse)])
            block = summary["methods"].setdefault(method, {})
            block[split] = {
                "per_class": {n: _metric_dict(c) for n, c in zip(names, rep.per_class)},
                "aggregate": {**d, "rmse": rep.rmse},
            }
    counts = bundle.selected_counts()
    if counts:
        summary["selection"] = {
            "counts": counts, "mean": float(np.mean(counts)), "min": min(counts),
            "max": max(counts),
            "best_fitness": [r.best_fitness for r in bundle.runs],
        }
    with open(path("summary.json"), "w") as fh:
        json.dump(_round4(summary), fh, indent=2)
        fh.write("\n")

    with open(path("selection.txt"), "w") as fh:
        for r in bundle.runs:
            fh.write(de.mask_to_str(r.mask) + "\n")
    for r in bundle.runs:
        r.history.to_csv(path(f"de_history_run{r.run}.csv"))
    if bundle.train_history is not None:
        bundle.train_history.to_csv(path("train_history.csv"))
    return written


def read_summary(out_dir) -> dict:
    with open(Path(out_dir) / "summary.json") as fh:
        return json.load(fh)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def verify_report(out_dir) -> list[str]:
    """Recompute accuracy from every emitted confusion CSV and compare.

    Returns a list of mismatch descriptions (empty when consistent).
    """
    out = Path(out_dir)
    problems = []
    summary_rows = _read_csv(out / "metrics_summary.csv")
    head = summary_rows[0]
    ia = head.index("accuracy")
    reported = {(r[0], r[1]): r for r in summary_rows[1:]}
    per_class_rows = _read_csv(out / "metrics_per_class.csv")
    pc_head = per_class_rows[0]
    pc = {(r[0], r[1], r[2]): r for r in per_class_rows[1:]}
    checked = 0
    for method in METHODS:
        for split in SPLITS:
            p = out / f"confusion_{split}_{method}.csv"
            if not p.exists():
                continue
            rows = _read_csv(p)
            names = rows[0][1:]
            cm = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
            per = metrics.ovr_all(cm)
            agg = metrics.aggregate_confusions(per)
            acc = fmt(metrics.accuracy(agg))
            got = reported.get((method, split))
            if got is None:
                problems.append(f"{method}/{split}: missing from metrics_summary.csv")
            elif got[ia] != acc:
                problems.append(f"{method}/{split}: accuracy {got[ia]} != recomputed {acc}")
            for name, c in zip(names, per):
                row = pc.get((method, split, name))
                want = fmt(metrics.accuracy(c))
                if row is None or row[pc_head.index("accuracy")] != want:
                    problems.append(f"{method}/{split}/{name}: per-class accuracy mismatch")
            checked += 1
    if checked == 0:
        problems.append("no confusion CSVs found")
    return problems
