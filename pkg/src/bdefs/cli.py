"""Command line entry point: ``bdefs <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import BACKEND, convnet, data, de, pipeline

log = logging.getLogger("bdefs")

# flag name -> PipelineConfig field
_OVERRIDES = {
    "seed": "seed", "runs": "runs", "pop_size": "pop_size", "generations": "generations",
    "cr": "cr", "epochs": "epochs", "batch_size": "batch_size", "gamma": "gamma",
    "svm_c": "svm_c", "stratified": "stratified", "retrain_extractor": "retrain_extractor",
    "features": "features", "images": "images",
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--pop-size", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--cr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--svm-c", type=float)
    p.add_argument("--stratified", action="store_true", default=None)
    p.add_argument("--retrain-extractor", action="store_true", default=None)
    p.add_argument("--features", help="feature CSV (f0..f{D-1},label)")
    p.add_argument("--images", help="image root: <root>/<class>/*.pgm")


def build_config(args) -> pipeline.PipelineConfig:
    values = pipeline.read_config(args.config) if getattr(args, "config", None) else {}
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    return pipeline.PipelineConfig(**values)


def _load_dataset(cfg: pipeline.PipelineConfig) -> data.LabeledDataset:
    if cfg.features:
        return data.load_features(cfg.features)
    if cfg.images:
        ds = data.load_images(cfg.images)
        log.info("loaded %d images: %s", ds.n, ds.class_counts())
        return ds
    raise SystemExit("error: give --features or --images (or set them in --config)")


def cmd_synth(args):
    if args.mode == "features":
        ds = data.synth_features(args.n, args.d, args.informative, args.noise,
                                 args.classes, seed=args.seed)
        data.save_features(ds, args.out)
    else:
        ds = data.synth_images(args.n, args.size, args.size, args.classes, args.noise,
                               seed=args.seed)
        data.save_images(ds, args.out)
    print(f"wrote {ds.n} samples to {args.out}")


def cmd_train_extractor(args):
    cfg = build_config(args)
    ds = _load_dataset(cfg)
    if ds.images is None:
        raise SystemExit("error: train-extractor needs --images")
    split = data.split_data(ds.n, cfg.seed + 1, ds.labels, cfg.stratified)
    model, hist = pipeline.train_extractor(ds, split, cfg, cfg.seed)
    model.save(args.out)
    if args.history:
        hist.to_csv(args.history)
    print(f"final validation accuracy {hist.rows[-1][4]:.4f}; model written to {args.out}")


def cmd_extract(args):
    ds = data.load_images(args.images)
    model = convnet.ConvNetModel.load(args.model)
    ds.features = convnet.extract_features(model, ds.images)
    data.save_features(ds, args.out)
    print(f"wrote {ds.features.shape[1]} features for {ds.n} images to {args.out}")


def cmd_select(args):
    cfg = build_config(args)
    ds = _load_dataset(cfg)
    if ds.features is None:
        raise SystemExit("error: select needs --features")
    seed = cfg.seed + 1
    split = data.split_data(ds.n, seed, ds.labels, cfg.stratified)
    mask, best, hist = pipeline.select_features(ds.features, ds.labels, split, cfg, seed,
                                                ds.n_classes)
    out = data.ensure_dir(args.out)
    (out / "selection.txt").write_text(de.mask_to_str(mask) + "\n")
    hist.to_csv(out / "de_history_run1.csv")
    print(f"best fitness {best:.4f} with {int(mask.sum())}/{mask.size} features")


def cmd_evaluate(args):
    cfg = build_config(args)
    ds = _load_dataset(cfg)
    if ds.features is None:
        raise SystemExit("error: evaluate needs --features")
    if args.mask:
        mask = de.mask_from_str(Path(args.mask).read_text().splitlines()[0])
    else:
        mask = np.ones(ds.features.shape[1], dtype=np.uint8)
    if mask.size != ds.features.shape[1]:
        raise SystemExit(f"error: mask has {mask.size} bits for {ds.features.shape[1]} features")
    seed = cfg.seed + 1
    split = data.split_data(ds.n, seed, ds.labels, cfg.stratified)
    _, scores = pipeline.evaluate_mask(ds.features, ds.labels, split, mask,
                                       cfg.svm_params(seed), ds.n_classes)
    result = {}
    for name, sc in scores.items():
        rep = pipeline.metrics.metric_report(sc.confusion, sc.auc, sc.rmse)
        result[name] = {"aggregate": {**pipeline._metric_dict(rep.aggregate), "rmse": rep.rmse}}
    print(json.dumps(pipeline._round4(result), indent=2))


def cmd_run(args):
    cfg = build_config(args)
    ds = _load_dataset(cfg)

    def progress(r, res):
        log.info("run %d/%d: %d features, fitness %.4f", r, cfg.runs, int(res.mask.sum()),
                 res.best_fitness)

    bundle = pipeline.run_pipeline(cfg, ds, progress)
    pipeline.emit_reports(bundle, args.out)
    if bundle.failures:
        print(f"{len(bundle.failures)} run(s) failed; see summary.json", file=sys.stderr)
    print(f"reports written to {args.out} ({len(bundle.runs)}/{cfg.runs} runs)")
    return 1 if not bundle.runs else 0


def cmd_verify(args):
    problems = pipeline.verify_report(args.dir)
    for p in problems:
        print("MISMATCH", p)
    if problems:
        return 1
    print("report consistent")
    return 0


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bdefs", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic feature CSV or image tree")
    p.add_argument("mode", choices=("features", "images"))
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--informative", type=int, default=5)
    p.add_argument("--size", type=int, default=28)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-extractor", help="train the CNN on an image tree")
    _add_common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="per-epoch history CSV")
    p.set_defaults(func=cmd_train_extractor)

    p = sub.add_parser("extract", help="write hidden-layer features of a trained CNN")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select", help="one BDE feature-selection run")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="score a mask (default: all features)")
    _add_common(p)
    p.add_argument("--mask", help="mask file; first line is used")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="full multi-run pipeline with reports")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify-report", help="recheck accuracy against emitted confusions")
    p.add_argument("dir")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("solver backend: %s", BACKEND)
    if args.command == "synth" and args.noise is None:
        args.noise = 1.0 if args.mode == "features" else 0.3
    try:
        return int(args.func(args) or 0)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
