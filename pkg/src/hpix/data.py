"""Paired-tile dataset ingestion, augmentation, and batching.

The reference dataset ships combined 1200x600 frames with the satellite
tile on the left half and the map tile on the right half, under
`<root>/train` and `<root>/val`. A JSON manifest file can describe other
layouts, including separate satellite/map files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, DataError

SPLIT_DIRS = {"train": ("train",), "test": ("val", "test")}


@dataclass
class PairedSample:
    satellite: np.ndarray  # HxWx3 uint8, display space
    map_target: np.ndarray  # HxWx3 uint8, display space
    id: str

    def __post_init__(self):
        if self.satellite.shape != self.map_target.shape:
            raise DataError(f"{self.id}: satellite and map shapes differ")
        if self.satellite.ndim != 3 or self.satellite.shape[2] != 3:
            raise DataError(f"{self.id}: expected HxWx3 images")


@dataclass
class AugmentationPolicy:
    jitter_resize: int = 286
    crop: int = 256
    hflip_prob: float = 0.5
    enabled: bool = True

    def __post_init__(self):
        if self.jitter_resize < self.crop:
            raise ConfigError("jitter_resize must be >= crop")


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.entries)


def _read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def split_frame(frame: np.ndarray, stem: str) -> PairedSample:
    """Split a side-by-side frame into its (satellite, map) halves."""
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DataError(f"{stem}: combined frame must be HxWx3")
    h, w = frame.shape[:2]
    if w % 2 != 0:
        raise DataError(f"{stem}: combined frame width {w} is odd, cannot split")
    half = w // 2
    return PairedSample(
        satellite=np.ascontiguousarray(frame[:, :half]),
        map_target=np.ascontiguousarray(frame[:, half:]),
        id=stem,
    )


def load_pair(path) -> PairedSample:
    """Load one combined frame (satellite left, map right) from disk."""
    path = Path(path)
    return split_frame(_read_image(path), path.stem)


def load_entry(entry) -> PairedSample:
    """Load a manifest entry: either a combined frame or separate files."""
    if "combined" in entry:
        return load_pair(entry["combined"])
    sat = _read_image(entry["satellite"])
    tgt = _read_image(entry["map"])
    stem = entry.get("id", Path(entry["satellite"]).stem)
    if sat.shape != tgt.shape:
        raise DataError(f"{stem}: satellite and map sizes differ")
    return PairedSample(satellite=sat, map_target=tgt, id=stem)


def scan_dataset(root, split: str) -> DatasetManifest:
    """Build a manifest from a `<root>/{train,val}` combined-frame layout."""
    root = Path(root)
    if split not in SPLIT_DIRS:
        raise ConfigError(f"unknown split {split!r}; expected 'train' or 'test'")
    split_dir = None
    for candidate in SPLIT_DIRS[split]:
        if (root / candidate).is_dir():
            split_dir = root / candidate
            break
    if split_dir is None:
        raise DataError(f"no {'/'.join(SPLIT_DIRS[split])} directory under {root}")
    files = sorted(
        p for p in split_dir.iterdir() if p.suffix.lower() in {".jpg", ".jpeg", ".png"}
    )
    entries = [{"combined": str(p), "id": p.stem} for p in files]
    return DatasetManifest(root=root, split=split, entries=entries)


def load_manifest_file(path, split: str = "train") -> DatasetManifest:
    """Read a JSON manifest describing a nonstandard dataset layout.

    Schema: {"layout": "combined"|"separate", "samples": [...]} where each
    sample names either a "combined" frame or a "satellite"/"map" file pair.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    layout = spec.get("layout", "combined")
    if layout not in ("combined", "separate"):
        raise ConfigError(f"manifest layout {layout!r} not supported")
    base = path.parent
    entries = []
    for sample in spec.get("samples", []):
        entry = dict(sample)
        for key in ("combined", "satellite", "map"):
            if key in entry:
                entry[key] = str((base / entry[key]).resolve())
        entries.append(entry)
    return DatasetManifest(root=base, split=split, entries=entries)


def open_manifest(data_path, split: str) -> DatasetManifest:
    data_path = Path(data_path)
    if data_path.is_file() and data_path.suffix == ".json":
        return load_manifest_file(data_path, split)
    return scan_dataset(data_path, split)


def normalize(img: np.ndarray) -> np.ndarray:
    """uint8 HxWxC display image -> float32 CxHxW in [-1, 1]."""
    out = img.astype(np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def denormalize(img: np.ndarray) -> np.ndarray:
    """float CxHxW in [-1, 1] -> uint8 HxWxC, rounded to integers."""
    arr = np.asarray(img)
    out = (arr.transpose(1, 2, 0) + 1.0) * 127.5
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _resize(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[0] == size and img.shape[1] == size:
        return img
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def preprocess_pair(sample: PairedSample, policy: AugmentationPolicy, rng) -> tuple:
    """Resize/jitter/flip a pair and normalize it to model space.

    The same crop window and flip decision apply to both images. With the
    policy disabled only the resize-to-crop and normalization run, so the
    output is deterministic.
    """
    sat, tgt = sample.satellite, sample.map_target
    if policy.enabled:
        sat = _resize(sat, policy.jitter_resize)
        tgt = _resize(tgt, policy.jitter_resize)
        span = policy.jitter_resize - policy.crop
        r0 = int(rng.integers(0, span + 1))
        c0 = int(rng.integers(0, span + 1))
        sat = sat[r0 : r0 + policy.crop, c0 : c0 + policy.crop]
        tgt = tgt[r0 : r0 + policy.crop, c0 : c0 + policy.crop]
        if rng.random() < policy.hflip_prob:
            sat = sat[:, ::-1]
            tgt = tgt[:, ::-1]
    else:
        sat = _resize(sat, policy.crop)
        tgt = _resize(tgt, policy.crop)
    return torch.from_numpy(normalize(sat)), torch.from_numpy(normalize(tgt))


@dataclass
class Batch:
    satellite: torch.Tensor  # Nx3xHxW model space
    map_target: torch.Tensor
    ids: list


def epoch_rng(seed: int, epoch: int):
    """RNG that drives shuffling and augmentation for one epoch.

    Derived from (seed, epoch) only, so a resumed run regenerates the exact
    stream of any later epoch without replaying earlier ones.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def batch_iterator(manifest: DatasetManifest, policy: AugmentationPolicy,
                   batch_size: int, seed: int, epoch: int = 0):
    """Yield shuffled batches covering every sample exactly once."""
    if manifest.count == 0:
        raise ConfigError("manifest is empty")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = epoch_rng(seed, epoch)
    order = rng.permutation(manifest.count)
    for start in range(0, manifest.count, batch_size):
        idx = order[start : start + batch_size]
        xs, ys, ids = [], [], []
        for i in idx:
            entry = manifest.entries[int(i)]
            sample = load_entry(entry)
            x, y = preprocess_pair(sample, policy, rng)
            xs.append(x)
            ys.append(y)
            ids.append(sample.id)
        yield Batch(torch.stack(xs), torch.stack(ys), ids)
