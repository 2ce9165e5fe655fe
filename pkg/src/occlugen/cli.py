"""Command line interface.

Subcommands: ``natocc``, ``randocc`` and ``mix`` generate datasets, ``eval``
scores predictions against ground truth, ``stats`` summarizes a manifest,
``inspect`` regenerates one sample and proves it matches what is on disk.

Exit codes: 0 success, 1 validation or configuration failure, 2 runtime
failure. The ``OCCLUGEN_LOG`` environment variable (debug, info, warning,
error) controls log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, imgcore, metrics
from .errors import ConfigError, GenerationError, InputError, OcclugenError

log = logging.getLogger("occlugen.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="occlugen",
        description="Synthesize occluded-face segmentation datasets and score predictions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("natocc", "composite naturalistic occluders (hands, objects) over faces"),
        ("randocc", "composite procedural textured shapes over faces"),
        ("mix", "draw each sample's pipeline from the configured mix weights"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override global_seed")
        p.add_argument("--count", type=int, default=None, help="override sample count")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument(
            "--force", action="store_true", help="overwrite an existing run in the output directory"
        )
        p.set_defaults(func=cmd_generate, pipeline=name)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--classes", type=int, default=2, help="number of classes (default 2)")
    p.add_argument(
        "--per-image",
        action="store_true",
        help="average per-image metrics instead of pooling one global matrix",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="summarize a run manifest")
    p.add_argument("--manifest", required=True, help="path to manifest.jsonl")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("inspect", help="regenerate one sample and compare against disk")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--id", required=True, help="sample id from the manifest")
    p.set_defaults(func=cmd_inspect)
    return parser


def parse_config(path, overrides: dict | None = None) -> dataset.GenerationConfig:
    """Load a JSON config file, apply CLI overrides, validate everything."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file {p} does not exist"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{p}: not valid JSON: {exc}"])
    config = dataset.config_from_dict(raw)
    if overrides:
        config = dataclasses.replace(config, **overrides)
        errors = config.validate()
        if errors:
            raise ConfigError(errors)
    return config


def cmd_generate(args) -> int:
    overrides: dict = {"pipeline": args.pipeline}
    if args.seed is not None:
        overrides["global_seed"] = args.seed
    if args.count is not None:
        overrides["count"] = args.count
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output_dir"] = args.out
    config = parse_config(args.config, overrides)
    records = dataset.run_generation(config, force=args.force)
    skipped = sum(1 for r in records if r.status == "skipped")
    print(f"wrote {len(records) - skipped} samples ({skipped} skipped) to {config.output_dir}")
    return EXIT_OK


def _load_label_map(path: Path, num_classes: int) -> np.ndarray:
    """Two-class masks binarize at 128; more classes read gray values as labels."""
    if num_classes == 2:
        return imgcore.read_binary_mask_png(path).astype(np.int64)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.int64)


def cmd_eval(args) -> int:
    if args.classes < 2:
        raise InputError(f"--classes must be at least 2, got {args.classes}")
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise InputError(f"directory {d} does not exist")
    gt_files = sorted(f for f in gt_dir.iterdir() if f.suffix.lower() == ".png")
    if not gt_files:
        raise InputError(f"no ground-truth masks in {gt_dir}")
    pairs = []
    for gt_file in gt_files:
        pred_file = pred_dir / gt_file.name
        if not pred_file.exists():
            raise InputError(f"prediction missing for {gt_file.name}")
        pairs.append((pred_file, gt_file))

    k = args.classes
    if args.per_image:
        per_miou, per_fwiou, per_acc = [], [], []
        for pred_file, gt_file in pairs:
            cm = _matrix_for_pair(pred_file, gt_file, k)
            per_miou.append(metrics.mean_iou(cm))
            per_fwiou.append(metrics.fw_iou(cm))
            per_acc.append(metrics.pixel_accuracy(cm))
        print(f"images: {len(pairs)}")
        print(f"miou: {np.mean(per_miou):.6f}")
        print(f"fwiou: {np.mean(per_fwiou):.6f}")
        print(f"pixel_acc: {np.mean(per_acc):.6f}")
        return EXIT_OK

    cm = metrics.ConfusionMatrix.zeros(k)
    for pred_file, gt_file in pairs:
        pred = _load_label_map(pred_file, k)
        gt = _load_label_map(gt_file, k)
        if pred.shape != gt.shape:
            raise InputError(
                f"{gt_file.name}: prediction is {pred.shape} but ground truth is {gt.shape}"
            )
        try:
            metrics.accumulate(cm, pred.astype(np.int64), gt.astype(np.int64))
        except InputError as exc:
            raise InputError(f"{gt_file.name}: {exc}")
    ious = metrics.iou_per_class(cm)
    print(f"images: {len(pairs)}")
    for c, iou in enumerate(ious):
        shown = "undefined" if np.isnan(iou) else f"{iou:.6f}"
        print(f"iou[{c}]: {shown}")
    print(f"miou: {metrics.mean_iou(cm):.6f}")
    print(f"fwiou: {metrics.fw_iou(cm):.6f}")
    print(f"pixel_acc: {metrics.pixel_accuracy(cm):.6f}")
    return EXIT_OK


def _matrix_for_pair(pred_file: Path, gt_file: Path, k: int) -> metrics.ConfusionMatrix:
    pred = _load_label_map(pred_file, k)
    gt = _load_label_map(gt_file, k)
    if pred.shape != gt.shape:
        raise InputError(
            f"{gt_file.name}: prediction is {pred.shape} but ground truth is {gt.shape}"
        )
    cm = metrics.ConfusionMatrix.zeros(k)
    try:
        return metrics.accumulate(cm, pred.astype(np.int64), gt.astype(np.int64))
    except InputError as exc:
        raise InputError(f"{gt_file.name}: {exc}")


def cmd_stats(args) -> int:
    if not Path(args.manifest).is_file():
        raise InputError(f"manifest {args.manifest} does not exist")
    records = dataset.read_manifest(args.manifest)
    ok = [r for r in records if r.status == "ok"]
    skipped = len(records) - len(ok)
    print(f"records: {len(records)}")
    print(f"ok: {len(ok)}")
    print(f"skipped: {skipped}")
    for pipeline in ("natocc", "randocc"):
        n = sum(1 for r in records if r.pipeline == pipeline)
        if n:
            print(f"pipeline {pipeline}: {n}")
    translucent = [r for r in ok if r.alpha is not None and r.alpha < 1.0]
    if ok:
        print(f"translucent fraction: {len(translucent) / len(ok):.4f}")
    scales = [r.scale for r in ok if r.scale is not None]
    if scales:
        hist, edges = np.histogram(scales, bins=10, range=(0.0, 1.0))
        print("scale histogram:")
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            if count:
                print(f"  [{lo:.1f}, {hi:.1f}): {count}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    run_dir = Path(args.out)
    manifest_path = run_dir / "manifest.jsonl"
    snapshot_path = run_dir / "config.snapshot"
    for p in (manifest_path, snapshot_path):
        if not p.exists():
            raise InputError(f"{p} does not exist; is {run_dir} a run directory?")
    records = dataset.read_manifest(manifest_path)
    record = next((r for r in records if r.sample_id == args.id), None)
    if record is None:
        raise InputError(f"sample id {args.id!r} not found in {manifest_path}")
    config = dataset.config_from_dict(json.loads(snapshot_path.read_text(encoding="utf-8")))

    index = int(record.sample_id)
    expected_seed = dataset.derive_seed(config.global_seed, index)
    print(f"sample_id: {record.sample_id}")
    print(f"pipeline: {record.pipeline}")
    print(f"face_id: {record.face_id}")
    print(f"occluder_ids: {','.join(record.occluder_ids) or '-'}")
    print(f"seed: {record.seed}")
    print(f"status: {record.status}")
    if record.seed != expected_seed:
        print(f"seed mismatch: manifest has {record.seed}, derivation gives {expected_seed}")
        return EXIT_RUNTIME
    chash = dataset.config_hash(config)
    if record.config_hash != chash:
        print(f"config hash mismatch: manifest has {record.config_hash}, snapshot gives {chash}")
        return EXIT_RUNTIME

    regen_record, sample = dataset.regenerate_sample(config, index)
    if regen_record != record:
        print("record mismatch: regenerated manifest row differs")
        print(f"  stored:      {record.to_json()}")
        print(f"  regenerated: {regen_record.to_json()}")
        return EXIT_RUNTIME
    if record.status == "skipped":
        print("verdict: skipped sample, record reproduced exactly")
        return EXIT_OK

    if sample.sot_report is not None:
        rep = sample.sot_report
        print("sot preprocess:")
        print(f"  s_quantity: {rep.s_quantity}")
        print(f"  t_quantity: {rep.t_quantity}")
        print(f"  black_ratio: {rep.black_ratio:.6f}")
        print(f"  replaced_count: {rep.replaced_count}")
        rc = ", ".join(f"{c:.6f}" for c in rep.replacement_color)
        print(f"  replacement_color: ({rc})")

    image_path = run_dir / "images" / f"{record.sample_id}.png"
    mask_path = run_dir / "masks" / f"{record.sample_id}.png"
    for path, regenerated in (
        (image_path, imgcore.encode_image_png(sample.image)),
        (mask_path, imgcore.encode_mask_png(sample.gt_mask)),
    ):
        if not path.exists():
            print(f"verdict: {path} is missing")
            return EXIT_RUNTIME
        if path.read_bytes() != regenerated:
            print(f"verdict: {path} differs from the regenerated bytes")
            return EXIT_RUNTIME
    print("verdict: bit-exact match (image and mask)")
    return EXIT_OK


def main(argv=None) -> int:
    level = os.environ.get("OCCLUGEN_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_INVALID
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except GenerationError as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OcclugenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
