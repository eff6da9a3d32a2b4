"""Image quality metrics and the test-set evaluation harness.

All three metrics operate on display-space images: uint8 arrays, HxWxC
(or HxW for single channel), values in [0, 255]. Model outputs must be
denormalized and rounded to 8-bit before scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0

PIXEL_ACCURACY_SEMANTICS = (
    "fraction of pixels whose every channel deviates by at most the "
    "tolerance (default 5) from the target, measured on 8-bit values"
)


def _as_display(img, name):
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name}: expected HxW or HxWxC image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ShapeError(f"{name}: display-space images must be uint8, got {arr.dtype}")
    return arr


def _check_same_shape(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")


def pixel_accuracy(pred, target, tolerance: int = 5) -> float:
    """Fraction of pixels within `tolerance` of the target on every channel."""
    p = _as_display(pred, "pred")
    t = _as_display(target, "target")
    _check_same_shape(p, t)
    diff = np.abs(p.astype(np.int16) - t.astype(np.int16))
    ok = (diff <= tolerance).all(axis=2)
    return float(ok.mean())


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    p = _as_display(pred, "pred")
    t = _as_display(target, "target")
    _check_same_shape(p, t)
    mse = np.mean((p.astype(np.float64) - t.astype(np.float64)) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(DYNAMIC_RANGE**2 / mse))


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _ssim_channel(x: np.ndarray, y: np.ndarray, win: np.ndarray) -> float:
    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    var_x = convolve2d(x * x, win, mode="valid") - mu_x**2
    var_y = convolve2d(y * y, win, mode="valid") - mu_y**2
    cov = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(pred, target) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    p = _as_display(pred, "pred")
    t = _as_display(target, "target")
    _check_same_shape(p, t)
    h, w = p.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = _gaussian_window()
    values = [
        _ssim_channel(p[:, :, c].astype(np.float64), t[:, :, c].astype(np.float64), win)
        for c in range(p.shape[2])
    ]
    return float(np.mean(values))


@dataclass
class MetricReport:
    pixel_accuracy: float
    psnr_db: float
    ssim: float
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "pixel_accuracy": self.pixel_accuracy,
            "psnr_db": self.psnr_db,
            "ssim": self.ssim,
            "n_samples": self.n_samples,
        }


def score_pairs(pairs) -> MetricReport:
    """Average the three metrics over an iterable of (pred, target) uint8 images.

    Aggregation is sequential in the given order, so results are deterministic.
    """
    acc = []
    ps = []
    ss = []
    for pred, target in pairs:
        acc.append(pixel_accuracy(pred, target))
        ps.append(psnr(pred, target))
        ss.append(ssim(pred, target))
    if not acc:
        raise ShapeError("no samples to score")
    return MetricReport(
        pixel_accuracy=float(np.mean(acc)),
        psnr_db=float(np.mean(ps)),
        ssim=float(np.mean(ss)),
        n_samples=len(acc),
    )


def evaluate(checkpoint_path, manifest, device: str = "cpu") -> dict:
    """Run both generator stages over a test manifest and score the outputs.

    Returns the final-stage MetricReport fields plus a `global_only` block
    scoring the coarse pre-refinement output, to quantify how much the
    second stage repairs.
    """
    # lazy imports keep the metric functions usable without torch
    from . import data as data_mod
    from .checkpoint import load_checkpoint, restore_networks
    from .errors import DataError

    if manifest.count == 0:
        raise DataError("empty test set")

    ckpt = load_checkpoint(checkpoint_path)
    nets = restore_networks(ckpt, device=device)
    baseline = bool(ckpt.config.get("baseline_pix2pix", False))

    policy = data_mod.AugmentationPolicy(enabled=False)
    finals = []
    globals_ = []
    for entry in manifest.entries:
        sample = data_mod.load_entry(entry)
        x, y = data_mod.preprocess_pair(sample, policy, np.random.default_rng(0))
        pred_final, pred_global = _run_stages(nets, x, baseline, device)
        target = data_mod.denormalize(y.numpy())
        finals.append((pred_final, target))
        globals_.append((pred_global, target))

    report = score_pairs(finals).as_dict()
    report["global_only"] = score_pairs(globals_).as_dict()
    report["pixel_accuracy_semantics"] = PIXEL_ACCURACY_SEMANTICS
    return report


def _run_stages(nets, x, baseline: bool, device: str):
    import torch

    from . import data as data_mod

    g_net, h_net = nets.global_generator, nets.local_generator
    xb = x.unsqueeze(0).to(device)
    with torch.no_grad():
        if baseline:
            g_img = torch.zeros_like(xb)
        else:
            g_img = g_net(xb).final
        h_img = h_net(xb, g_img).final
    pred_final = data_mod.denormalize(h_img[0].cpu().numpy())
    pred_global = data_mod.denormalize(g_img[0].cpu().numpy())
    return pred_final, pred_global
