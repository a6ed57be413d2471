"""Command-line entry points.

One verb per process: synth, prepare, train-siamese, train-matching,
train-ssm, eval, cluster-score, embed. Config comes from a flat
`key = value` file plus `--set key=value` overrides; every run writes a
JSON report (to --out, else stdout). Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .data import (apply_split, read_split_file, scan_dataset, split_classes,
                   synth_dataset, write_split_file)
from .errors import ConfigError, DataError, NumericError
from .pipelines import (MetricsReport, RunConfig, cluster_eval, config_hash,
                        embed_records, evaluate_fewshot, train_matching,
                        train_siamese, train_ssm, _maybe_split, _new_report)
from .weights import load_weights, save_weights

_TRUE_WORDS = {"true", "1", "yes", "on"}
_FALSE_WORDS = {"false", "0", "no", "off"}


def _coerce(key: str, raw: str, default, where: str):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE_WORDS:
            return True
        if low in _FALSE_WORDS:
            return False
        raise ConfigError(f"{where}: key {key!r} expects a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: key {key!r} expects an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: key {key!r} expects a number, got {raw!r}") from None
    return raw


def parse_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from a flat `key = value` file plus override pairs.

    Unknown keys, bad types, and out-of-range values all fail naming the
    key and where it was set.
    """
    cfg = RunConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(RunConfig)}
    where_set = {}

    def assign(key, raw, where):
        if key not in defaults:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, defaults[key], where))
        where_set[key] = where

    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path} does not exist")
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw_line in enumerate(f, start=1):
                line = raw_line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw_line.strip()!r}")
                key, value = line.split("=", 1)
                assign(key.strip(), value, f"{path}:{lineno}")
    for pair in overrides:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, value = pair.split("=", 1)
        assign(key.strip(), value, f"--set {pair}")

    try:
        cfg.validate()
    except ConfigError as exc:
        key = str(exc).split()[0]
        if key in where_set:
            raise ConfigError(f"{where_set[key]}: {exc}") from None
        raise
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fewshot",
        description="Few-shot metric-learning toolkit: contrastive and "
                    "episodic training, evaluation, and cluster scoring.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, needs_data=True):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable")
        sp.add_argument("--seed", type=int, help="overrides config seed")
        sp.add_argument("--out", help="report JSON path (default: stdout)")
        if needs_data:
            sp.add_argument("--data", help="dataset root directory")
            sp.add_argument("--split", help="split file to apply (sections base/validation/test)")

    sp = sub.add_parser("synth", help="generate a procedural synthetic dataset")
    common(sp)
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--per-class", type=int, required=True)

    sp = sub.add_parser("prepare", help="scan a dataset, split classes, write a split file")
    common(sp)
    sp.add_argument("--split-out", help="where to write the split file")

    for verb in ("train-siamese", "train-matching", "train-ssm"):
        sp = sub.add_parser(verb, help=f"{verb.replace('-', ' ')} on the base split")
        common(sp)
        sp.add_argument("--weights-out", required=True, help="output weights path (.ssmw)")
        if verb == "train-matching":
            sp.add_argument("--initial-weights", help="warm-start backbone weights")
        if verb == "train-ssm":
            sp.add_argument("--siamese-weights", required=True,
                            help="trained contrastive extractor weights")

    sp = sub.add_parser("eval", help="episodic N-way K-shot evaluation")
    common(sp)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--mode", default="auto", choices=("auto", "matching", "ssm"))
    sp.add_argument("--section", default="test", choices=("base", "validation", "test"))

    sp = sub.add_parser("cluster-score", help="k-means + silhouette over embeddings")
    common(sp)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--mode", default="auto", choices=("auto", "matching", "ssm"))
    sp.add_argument("--subset", default="test", choices=("all", "test"))
    sp.add_argument("--k", type=int, help="cluster count (default: class count)")

    sp = sub.add_parser("embed", help="export embeddings as CSV")
    common(sp)
    sp.add_argument("--weights", required=True)
    sp.add_argument("--mode", default="auto", choices=("auto", "matching", "ssm"))
    sp.add_argument("--subset", default="test", choices=("all", "test"))
    sp.add_argument("--csv-out", required=True, help="embedding CSV path")
    return p


def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None):
        cfg.dataset_root = args.data
    if getattr(args, "initial_weights", None):
        cfg.initial_weights = args.initial_weights
    return cfg


def _manifest_for(args, cfg: RunConfig):
    if not cfg.dataset_root:
        raise ConfigError("no dataset root; pass --data or set dataset_root in the config")
    manifest = scan_dataset(cfg.dataset_root, image_size=cfg.image_size,
                            allow_png=cfg.allow_png)
    if getattr(args, "split", None):
        apply_split(manifest, read_split_file(args.split))
    return manifest


def _emit(report: MetricsReport, args):
    if args.out:
        report.save(args.out)
        print(f"report written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(report.to_json())


def _float_str(v) -> str:
    return np.format_float_positional(np.float32(v), unique=True)


def _write_embedding_csv(path, records, rows: np.ndarray):
    with open(path, "w", encoding="utf-8") as f:
        dim = rows.shape[1]
        f.write("path,class_name,class_id,aug_index," +
                ",".join(f"e{i}" for i in range(dim)) + "\n")
        for rec, row in zip(records, rows):
            f.write(f"{rec.path},{rec.class_name},{rec.class_id},{rec.aug_index},")
            f.write(",".join(_float_str(v) for v in row) + "\n")


def _dispatch(args) -> int:
    cfg = _load_config(args)

    if args.verb == "synth":
        if not cfg.dataset_root:
            raise ConfigError("synth needs --data as the output dataset root")
        root = synth_dataset(cfg.dataset_root, args.classes, args.per_class,
                             image_size=cfg.image_size, seed=cfg.seed)
        report = _new_report("synth", cfg)
        report.info = {"root": root, "classes": args.classes,
                       "per_class": args.per_class, "image_size": cfg.image_size}
        _emit(report, args)
        return 0

    if args.verb == "prepare":
        manifest = _manifest_for(args, cfg)
        counts = (cfg.base_classes, cfg.validation_classes, cfg.test_classes)
        if any(counts) and not getattr(args, "split", None):
            split_classes(manifest, *counts, seed=cfg.seed)
        if manifest.split is not None and args.split_out:
            write_split_file(manifest.split, args.split_out)
        report = _new_report("prepare", cfg)
        report.info = {
            "root": manifest.root,
            "classes": len(manifest.classes),
            "images": len(manifest.records),
            "counts": manifest.counts(),
            "skipped": [{"path": p, "reason": r} for p, r in manifest.skipped],
            "split": None if manifest.split is None else {
                "base": list(manifest.split.base),
                "validation": list(manifest.split.validation),
                "test": list(manifest.split.test),
            },
            "split_file": args.split_out or "",
        }
        _emit(report, args)
        return 0

    if args.verb == "train-siamese":
        manifest = _manifest_for(args, cfg)
        w, report = train_siamese(cfg, manifest)
        save_weights(w, args.weights_out)
        _emit(report, args)
        return 0

    if args.verb == "train-matching":
        manifest = _manifest_for(args, cfg)
        initial = load_weights(cfg.initial_weights) if cfg.initial_weights else None
        w, report = train_matching(cfg, manifest, initial_backbone=initial)
        save_weights(w, args.weights_out)
        _emit(report, args)
        return 0

    if args.verb == "train-ssm":
        manifest = _manifest_for(args, cfg)
        siamese = load_weights(args.siamese_weights)
        w, report = train_ssm(cfg, manifest, siamese)
        save_weights(w, args.weights_out)
        _emit(report, args)
        return 0

    if args.verb == "eval":
        manifest = _manifest_for(args, cfg)
        weights = load_weights(args.weights)
        report = evaluate_fewshot(weights, manifest, cfg, mode=args.mode,
                                  section=args.section)
        _emit(report, args)
        return 0

    if args.verb == "cluster-score":
        manifest = _manifest_for(args, cfg)
        weights = load_weights(args.weights)
        report = cluster_eval(weights, manifest, cfg, subset=args.subset,
                              k=args.k, mode=args.mode)
        _emit(report, args)
        return 0

    if args.verb == "embed":
        manifest = _manifest_for(args, cfg)
        weights = load_weights(args.weights)
        if args.subset == "all":
            records = list(manifest.records)
        else:
            records = _maybe_split(cfg, manifest).section_records("test")
        rows = embed_records(weights, manifest, cfg, records, mode=args.mode)
        _write_embedding_csv(args.csv_out, records, rows)
        report = _new_report("embed", cfg)
        report.info = {"rows": len(records), "dim": int(rows.shape[1]),
                       "csv": os.path.abspath(args.csv_out), "subset": args.subset}
        _emit(report, args)
        return 0

    raise ConfigError(f"unknown verb {args.verb!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
