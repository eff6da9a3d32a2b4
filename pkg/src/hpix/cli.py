"""Command line entry point: train / translate / evaluate / postprocess / compare.

Configuration precedence is flags > config file (JSON via --config) >
defaults; the seed additionally falls back to the HPIX_SEED environment
variable. Every run writes its fully resolved configuration into the
output directory. Exit codes: 0 ok, 2 config error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from . import postprocess as post_mod
from .errors import ConfigError, DataError, HPixError

log = logging.getLogger("hpix")


def _parse_channels(text):
    try:
        return tuple(int(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad channel list {text!r}: {exc}") from exc


def _load_config_file(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


def _resolve(args, file_cfg, key, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in file_cfg:
        return file_cfg[key]
    return default


def _resolve_seed(args, file_cfg):
    seed = _resolve(args, file_cfg, "seed", None)
    if seed is None:
        seed = os.environ.get("HPIX_SEED")
    if seed is None:
        return 0
    try:
        return int(seed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {seed!r}") from exc


def _write_config_snapshot(out_dir, resolved):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(json.dumps(resolved, indent=2, default=str) + "\n")


def _read_image(path):
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _write_png(path, array):
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(array).save(path, format="PNG")


# ----------------------------------------------------------------------
# train
# ----------------------------------------------------------------------

def cmd_train(args) -> int:
    import torch  # noqa: F401  (fail early with a clear message if torch is broken)

    from .model import DiscriminatorSpec, GlobalGeneratorSpec, LocalGeneratorSpec
    from .report import render_loss_curves
    from .training import LossWeights, TrainConfig, train

    file_cfg = _load_config_file(args.config)
    seed = _resolve_seed(args, file_cfg)
    depth = int(_resolve(args, file_cfg, "depth", 8))
    channels = _resolve(args, file_cfg, "channels", None)
    if isinstance(channels, str):
        channels = _parse_channels(channels)
    if channels is None:
        from .model import PIX2PIX_CHANNELS

        channels = PIX2PIX_CHANNELS[:depth]
    channels = tuple(int(c) for c in channels)
    disc_channels = _resolve(args, file_cfg, "disc_channels", None)
    if isinstance(disc_channels, str):
        disc_channels = _parse_channels(disc_channels)

    config = TrainConfig(
        epochs=int(_resolve(args, file_cfg, "epochs", 200)),
        batch_size=int(_resolve(args, file_cfg, "batch_size", 1)),
        seed=seed,
        checkpoint_every=int(_resolve(args, file_cfg, "checkpoint_every", 50)),
        weights=LossWeights(
            lambda_l1=float(_resolve(args, file_cfg, "lambda_l1", 100.0)),
            lambda_ds=float(_resolve(args, file_cfg, "lambda_ds", 100.0)),
        ),
        learning_rate=float(_resolve(args, file_cfg, "learning_rate", 0.0002)),
        joint_routing=bool(_resolve(args, file_cfg, "joint_routing", False)),
        baseline_pix2pix=bool(_resolve(args, file_cfg, "baseline_pix2pix", False)),
        augment=not bool(_resolve(args, file_cfg, "no_augment", False)),
        global_spec=GlobalGeneratorSpec(depth=depth, level_channels=channels),
        local_spec=LocalGeneratorSpec(depth=depth, level_channels=channels),
        disc_spec=(
            DiscriminatorSpec(block_channels=tuple(disc_channels))
            if disc_channels
            else DiscriminatorSpec()
        ),
    )
    device = _resolve(args, file_cfg, "device", "cpu")
    out_dir = Path(args.out)

    resolved = asdict(config)
    resolved.update({"command": "train", "data": str(args.data), "device": device})
    _write_config_snapshot(out_dir, resolved)

    manifest = data_mod.open_manifest(args.data, "train")
    log.info("training on %d pairs for %d epochs", manifest.count, config.epochs)
    history, final_path = train(
        manifest, config, out_dir=out_dir, device=device, resume=args.resume
    )
    render_loss_curves(history, out_dir / "loss_curves.png")
    log.info("final checkpoint: %s", final_path)
    return 0


# ----------------------------------------------------------------------
# translate
# ----------------------------------------------------------------------

def _collect_inputs(paths):
    files = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            files.extend(
                sorted(q for q in p.iterdir() if q.suffix.lower() in {".png", ".jpg", ".jpeg"})
            )
        elif p.is_file():
            files.append(p)
        else:
            raise DataError(f"input {p} does not exist")
    if not files:
        raise DataError("no input images found")
    return files


def _translate_tile(nets, baseline, image, device):
    import cv2
    import torch

    h, w = image.shape[:2]
    resized = image if (h, w) == (256, 256) else cv2.resize(
        image, (256, 256), interpolation=cv2.INTER_LINEAR
    )
    x = torch.from_numpy(data_mod.normalize(resized)).unsqueeze(0).to(device)
    with torch.no_grad():
        if baseline:
            g_img = torch.zeros_like(x)
        else:
            g_img = nets.global_generator(x).final
        h_img = nets.local_generator(x, g_img).final
    final = data_mod.denormalize(h_img[0].cpu().numpy())
    coarse = data_mod.denormalize(g_img[0].cpu().numpy())
    if (h, w) != (256, 256):
        final = cv2.resize(final, (w, h), interpolation=cv2.INTER_LINEAR)
        coarse = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)
    return final, coarse


def cmd_translate(args) -> int:
    from .checkpoint import load_checkpoint, restore_networks

    file_cfg = _load_config_file(args.config)
    device = _resolve(args, file_cfg, "device", "cpu")
    out_dir = Path(args.out)
    _write_config_snapshot(out_dir, {
        "command": "translate", "checkpoint": str(args.ckpt),
        "inputs": [str(p) for p in args.inputs], "emit_global": bool(args.emit_global),
        "device": device, "seed": _resolve_seed(args, file_cfg),
    })

    ckpt = load_checkpoint(args.ckpt)
    nets = restore_networks(ckpt, device=device)
    baseline = bool(ckpt.config.get("baseline_pix2pix", False))

    files = _collect_inputs(args.inputs)
    failures = 0
    for path in files:
        try:
            image = _read_image(path)
            final, coarse = _translate_tile(nets, baseline, image, device)
            _write_png(out_dir / f"{path.stem}.png", final)
            if args.emit_global:
                _write_png(out_dir / f"{path.stem}_global.png", coarse)
        except HPixError as exc:
            failures += 1
            log.error("%s: %s", path, exc)
    if failures == len(files):
        raise DataError("every input failed to translate")
    log.info("translated %d/%d tiles into %s", len(files) - failures, len(files), out_dir)
    return 0


# ----------------------------------------------------------------------
# evaluate
# ----------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    file_cfg = _load_config_file(args.config)
    device = _resolve(args, file_cfg, "device", "cpu")
    report_path = Path(args.report)
    _write_config_snapshot(report_path.parent, {
        "command": "evaluate", "checkpoint": str(args.ckpt), "data": str(args.data),
        "device": device, "seed": _resolve_seed(args, file_cfg),
    })
    manifest = data_mod.open_manifest(args.data, "test")
    report = metrics_mod.evaluate(args.ckpt, manifest, device=device)
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    log.info(
        "accuracy %.4f | ssim %.4f | psnr %.2f dB over %d samples",
        report["pixel_accuracy"], report["ssim"], report["psnr_db"], report["n_samples"],
    )
    return 0


# ----------------------------------------------------------------------
# postprocess
# ----------------------------------------------------------------------

def cmd_postprocess(args) -> int:
    out_path = Path(args.out)
    _write_config_snapshot(out_path.parent, {
        "command": "postprocess", "map": str(args.map),
        "road_mask": args.road_mask and str(args.road_mask),
        "building_mask": args.building_mask and str(args.building_mask),
        "resolution": args.resolution,
        "annotations": args.annotations and str(args.annotations),
    })
    tile = _read_image(args.map)

    intersections = []
    if args.road_mask:
        intersections = post_mod.road_intersections(_read_image(args.road_mask))
    buildings = None
    if args.building_mask:
        mask = post_mod.binarize(post_mod.to_grayscale(_read_image(args.building_mask)))
        buildings = post_mod.classify_buildings(mask, resolution=args.resolution)

    overlay = post_mod.compose_overlay(tile, intersections, buildings)
    _write_png(out_path, overlay)
    if args.annotations:
        payload = post_mod.annotations_dict(intersections, buildings)
        Path(args.annotations).write_text(json.dumps(payload, indent=2) + "\n")
    log.info(
        "%d intersections, %d buildings -> %s",
        len(intersections), len(buildings.regions) if buildings else 0, out_path,
    )
    return 0


# ----------------------------------------------------------------------
# compare
# ----------------------------------------------------------------------

def cmd_compare(args) -> int:
    import torch

    from .checkpoint import load_checkpoint, restore_networks
    from .report import comparison_columns, render_comparison_grid

    if not args.ckpts:
        raise ConfigError("compare needs at least one checkpoint")
    file_cfg = _load_config_file(args.config)
    device = _resolve(args, file_cfg, "device", "cpu")
    out_dir = Path(args.out)
    _write_config_snapshot(out_dir, {
        "command": "compare", "checkpoints": [str(c) for c in args.ckpts],
        "data": str(args.data), "samples": args.samples, "device": device,
    })

    manifest = data_mod.open_manifest(args.data, "test")
    if manifest.count == 0:
        raise DataError("no test samples found")
    entries = manifest.entries[: args.samples]

    loaded = []
    seen = {}
    for path in args.ckpts:
        ckpt = load_checkpoint(path)
        name = Path(path).stem
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}-{seen[name]}"  # same stem from different directories
        loaded.append((
            name,
            restore_networks(ckpt, device=device),
            bool(ckpt.config.get("baseline_pix2pix", False)),
        ))

    with_global = args.with_global if args.with_global is not None else len(loaded) == 1
    columns = comparison_columns([name for name, _, _ in loaded], with_global)

    policy = data_mod.AugmentationPolicy(enabled=False)
    rows = []
    table = {name: [] for name, _, _ in loaded}
    for entry in entries:
        sample = data_mod.load_entry(entry)
        x, y = data_mod.preprocess_pair(sample, policy, np.random.default_rng(0))
        target = data_mod.denormalize(y.numpy())
        row = {"satellite": data_mod.denormalize(x.numpy()), "target": target}
        xb = x.unsqueeze(0).to(device)
        for name, nets, baseline in loaded:
            with torch.no_grad():
                g_img = (
                    torch.zeros_like(xb) if baseline else nets.global_generator(xb).final
                )
                h_img = nets.local_generator(xb, g_img).final
            row[f"{name}/final"] = data_mod.denormalize(h_img[0].cpu().numpy())
            row[f"{name}/global"] = data_mod.denormalize(g_img[0].cpu().numpy())
            table[name].append((row[f"{name}/final"], target))
        rows.append(row)

    grid_path = render_comparison_grid(rows, columns, out_dir / "grid.png")

    metric_rows = []
    for name, _, _ in loaded:
        rep = metrics_mod.score_pairs(table[name])
        metric_rows.append({
            "checkpoint": name,
            "pixel_accuracy": rep.pixel_accuracy,
            "ssim": rep.ssim,
            "psnr_db": rep.psnr_db,
        })
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["checkpoint", "pixel_accuracy", "ssim", "psnr_db"])
        writer.writeheader()
        writer.writerows(metric_rows)
    (out_dir / "metrics.json").write_text(json.dumps(metric_rows, indent=2) + "\n")
    log.info("wrote %s and metric tables for %d checkpoints", grid_path, len(loaded))
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpix",
        description="Satellite-to-map tile translation with a two-stage GAN. "
        "Config precedence: flags > --config file > defaults; HPIX_SEED is the seed fallback.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file merged below flags")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--device", default=None, help="cpu (default) or cuda")

    p = sub.add_parser("train", help="train both GAN stages")
    common(p)
    p.add_argument("--data", required=True, help="dataset root or manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lambda-l1", dest="lambda_l1", type=float, default=None)
    p.add_argument("--lambda-ds", dest="lambda_ds", type=float, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=None)
    p.add_argument("--depth", type=int, default=None, help="generator depth (default 8)")
    p.add_argument("--channels", default=None, help="comma list of per-level generator widths")
    p.add_argument("--disc-channels", dest="disc_channels", default=None,
                   help="comma list of 5 discriminator widths")
    p.add_argument("--joint-routing", dest="joint_routing", action="store_const", const=True,
                   default=None, help="backpropagate the refiner loss into the coarse stage")
    p.add_argument("--baseline-pix2pix", dest="baseline_pix2pix", action="store_const",
                   const=True, default=None,
                   help="train the refiner alone on (satellite, zero image)")
    p.add_argument("--no-augment", dest="no_augment", action="store_const", const=True,
                   default=None, help="disable jitter/flip augmentation")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="generate map tiles from satellite images")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-global", dest="emit_global", action="store_true",
                   help="also write the coarse pre-refinement tile")
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="output JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("postprocess", help="annotate a tile with intersections and clusters")
    common(p)
    p.add_argument("--map", required=True, help="generated map tile PNG")
    p.add_argument("--road-mask", dest="road_mask", default=None)
    p.add_argument("--building-mask", dest="building_mask", default=None)
    p.add_argument("--resolution", type=float, default=1.0, help="meters per pixel")
    p.add_argument("--out", required=True, help="annotated PNG path")
    p.add_argument("--annotations", default=None, help="optional annotations JSON path")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("compare", help="side-by-side grid + metric table for checkpoints")
    common(p)
    p.add_argument("--ckpts", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=3)
    p.add_argument("--with-global", dest="with_global", action="store_const", const=True,
                   default=None, help="add the coarse-stage column for every checkpoint")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except HPixError as exc:
        log.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
