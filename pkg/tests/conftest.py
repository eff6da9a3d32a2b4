import numpy as np
import pytest
import torch
from PIL import Image

from hpix.model import DiscriminatorSpec, GlobalGeneratorSpec, LocalGeneratorSpec

TINY_CHANNELS = (4, 8, 8, 8, 8, 8, 8, 8)
SMOKE_CHANNELS = (8, 16, 32, 64, 64, 64, 64, 64)


def tiny_global_spec(depth=8):
    return GlobalGeneratorSpec(depth=depth, level_channels=TINY_CHANNELS[:depth])


def tiny_local_spec(depth=8):
    return LocalGeneratorSpec(depth=depth, level_channels=TINY_CHANNELS[:depth])


def tiny_disc_spec():
    return DiscriminatorSpec(block_channels=(4, 8, 8, 8, 1))


def model_image(*shape, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(*shape, generator=gen) * 2 - 1).float()


def synthetic_map_pair(rng, size=256):
    """Map-like target (flat regions, a road stripe) and a noisy satellite."""
    target = np.full((size, size, 3), (228, 222, 210), np.uint8)
    for _ in range(6):
        r0, c0 = rng.integers(0, max(size - 56, 1), 2)
        h, w = rng.integers(size // 12, size // 5, 2)
        target[r0 : r0 + h, c0 : c0 + w] = rng.integers(0, 256, 3)
    road = int(rng.integers(size // 6, size - size // 6))
    target[max(road - 6, 0) : road + 6, :] = (255, 255, 255)
    noisy = target.astype(np.int16) + rng.integers(-35, 36, target.shape)
    satellite = np.clip(noisy, 0, 255).astype(np.uint8)
    return satellite, target


def write_combined_dataset(root, n_train=4, n_test=2, size=256, seed=7):
    """Write side-by-side PNG frames under root/train and root/val."""
    rng = np.random.default_rng(seed)
    for split, count in (("train", n_train), ("val", n_test)):
        d = root / split
        d.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            sat, tgt = synthetic_map_pair(rng, size=size)
            frame = np.concatenate([sat, tgt], axis=1)
            Image.fromarray(frame).save(d / f"{split}_{i}.png")
    return root


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("maps")
    return write_combined_dataset(root, n_train=4, n_test=2, size=64)
