"""Command-line pipeline: train, evaluate, predict, explain, synth, augment-preview.

All randomness flows from --seed; submodule streams derive from it
deterministically, so reruns with equal inputs produce byte-identical
artifacts (single-threaded mode).

Exit codes:
    0  success
    2  dataset layout error
    3  image format error
    4  checkpoint corruption
    5  parameter/shape/config error
    6  numerical failure (non-finite loss or gradients)
    1  unexpected failure (including I/O)
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import imaging, metrics, train
from .config import RunConfig, parse_run_config, serialize_run_config
from .errors import (
    CnxcError,
    CorruptionError,
    FormatError,
    LayoutError,
    NumericalError,
    ParameterError,
)
from .explain import feature_maps, grad_cam
from .model import build_model, load_checkpoint, save_checkpoint
from .rng import Rng

EXIT_CODES = (
    (LayoutError, 2),
    (FormatError, 3),
    (CorruptionError, 4),
    (ParameterError, 5),
    (NumericalError, 6),
)


def _load_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = parse_run_config(Path(args.config).read_text(), cfg)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _prepared_index(data_dir, cfg: RunConfig) -> ds.DatasetIndex:
    index = ds.scan_directory(data_dir)
    if any(e.split == ds.UNSPLIT for e in index.entries):
        index = ds.split(index, cfg.fractions(), seed=cfg.seed)
    return index


def _load_model(path):
    data = Path(path).read_bytes()
    return load_checkpoint(data)


def _read_image(path) -> imaging.GrayImage:
    return imaging.load_pgm(Path(path).read_bytes())


def _heatmap_to_pgm(values: np.ndarray) -> bytes:
    pixels = np.clip(np.floor(values * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return imaging.save_pgm(imaging.GrayImage(pixels))


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_run_config(cfg))
    index = _prepared_index(args.data, cfg)
    ds.write_manifest(index, out / "manifest.txt")
    rng = Rng(cfg.seed)
    model = build_model(cfg.model_config(), rng)
    print(f"model parameters: {model.param_count()}")
    model, history, ckpt = train.train(
        model, index, cfg.pipeline(), cfg.hyper(), rng, log=print
    )
    (out / "checkpoint.bin").write_bytes(ckpt)
    (out / "history.txt").write_text(train.format_history(history))
    report = train.evaluate(model, index, "val", cfg.pipeline(),
                            batch_size=cfg.batch_size, threads=cfg.threads)
    (out / "val_report.txt").write_text(metrics.format_report(report) + "\n")
    (out / "val_metrics.txt").write_text(metrics.report_kv(report))
    print(metrics.format_report(report))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    model = _load_model(args.checkpoint)
    cfg.input_size = model.cfg.input_h
    index = _prepared_index(args.data, cfg)
    report = train.evaluate(model, index, args.split, cfg.pipeline(),
                            batch_size=cfg.batch_size, threads=cfg.threads)
    print(metrics.format_report(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.split}_report.txt").write_text(metrics.format_report(report) + "\n")
        (out / f"{args.split}_metrics.txt").write_text(metrics.report_kv(report))
        if report.auc_defined:
            (out / f"{args.split}_roc.txt").write_text(metrics.roc_text(report))
        (out / "config.txt").write_text(serialize_run_config(cfg))
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    model = _load_model(args.checkpoint)
    cfg.input_size = model.cfg.input_h
    img = _read_image(args.image)
    x = cfg.pipeline().preprocess(img)
    probs, _ = model.forward(x[None, ...], mode="infer")
    p = float(probs[0])
    label = "Pneumonia" if p > metrics.THRESHOLD else "Normal"
    print(f"{p:.6f} {label}")
    return 0


def cmd_explain(args) -> int:
    cfg = _load_config(args)
    model = _load_model(args.checkpoint)
    cfg.input_size = model.cfg.input_h
    img = _read_image(args.image)
    x = cfg.pipeline().preprocess(img)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    block = args.block if args.block is not None else -1
    heat = grad_cam(model, x, block_index=block, input_ref=str(args.image))
    (out / f"{stem}_gradcam.pgm").write_bytes(_heatmap_to_pgm(heat.values))
    sidecar = "\n".join(" ".join(f"{v:.8f}" for v in row) for row in heat.values)
    (out / f"{stem}_gradcam.txt").write_text(sidecar + "\n")
    if heat.degenerate:
        print("warning: heatmap was identically constant; emitted all zeros")
    if args.features:
        maps = feature_maps(model, x, block)
        for ch, fmap in enumerate(maps):
            (out / f"{stem}_block{heat.source_layer + 1}_f{ch:03d}.pgm").write_bytes(
                _heatmap_to_pgm(fmap)
            )
    print(f"wrote {out / (stem + '_gradcam.pgm')}")
    return 0


def cmd_synth(args) -> int:
    ds.synth_dataset(args.n, args.size, args.seed, args.out)
    print(f"wrote {2 * args.n} images under {args.out}")
    return 0


def cmd_augment_preview(args) -> int:
    cfg = _load_config(args)
    img = _read_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(cfg.seed)
    stem = Path(args.image).stem
    log_lines = ["variant rotation_deg hflip zoom shear_rad"]
    for i in range(8):
        params = imaging.random_augment_params(rng.derive("preview", i), cfg.shear_max)
        aug = imaging.apply_augment(img, params)
        (out / f"{stem}_aug{i}.pgm").write_bytes(imaging.save_pgm(aug))
        log_lines.append(
            f"{i} {params.rotation_deg:.4f} {int(params.hflip)} "
            f"{params.zoom:.4f} {params.shear:.4f}"
        )
    (out / "augment_params.txt").write_text("\n".join(log_lines) + "\n")
    print(f"wrote 8 augmented variants under {out}")
    return 0


# ------------------------------------------------------------------ parser

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnxc",
        description="Chest X-ray pneumonia classifier: training, evaluation, explanation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("explain", help="write a Grad-CAM heatmap for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--block", type=int)
    p.add_argument("--features", action="store_true", help="also write per-filter maps")
    p.add_argument("--config")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", help="generate the synthetic two-class corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="images per class")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment-preview", help="write 8 augmented variants of an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_augment_preview)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CnxcError as exc:
        for klass, code in EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
