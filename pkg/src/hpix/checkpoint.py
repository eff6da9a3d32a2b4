"""Checkpoint archive: specs, parameters, optimizer state, and RNG position.

One file carries everything needed to resume training bit-identically or
to run inference: the four architecture specs, all parameter arrays keyed
by block id, optimizer moments, the epoch/step counters, the base seed,
and the torch RNG state. Format tag: "hpix-ckpt-v1".
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .errors import ConfigError, DataError
from .model import (
    DiscriminatorSpec,
    GlobalGeneratorSpec,
    LocalGeneratorSpec,
    build_network,
)

FORMAT_TAG = "hpix-ckpt-v1"

_SPEC_KINDS = {
    "global_generator": GlobalGeneratorSpec,
    "local_generator": LocalGeneratorSpec,
    "discriminator": DiscriminatorSpec,
}
_KIND_BY_TYPE = {cls: kind for kind, cls in _SPEC_KINDS.items()}

NET_KEYS = ("global_generator", "local_generator", "disc_global", "disc_local")


def spec_to_dict(spec) -> dict:
    d = {"kind": _KIND_BY_TYPE[type(spec)]}
    d.update(asdict(spec))
    return d


def spec_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    cls = _SPEC_KINDS[kind]
    for key, value in d.items():
        if isinstance(value, list):
            d[key] = tuple(value)
    return cls(**d)


@dataclass
class Checkpoint:
    specs: dict
    params: dict
    optim: dict
    epoch: int
    step: int
    seed: int
    torch_rng: torch.Tensor
    config: dict = field(default_factory=dict)


def save_checkpoint(path, *, specs, nets, optims, epoch, step, seed, config=None) -> Path:
    """Write the archive atomically (temp file + rename)."""
    path = Path(path)
    payload = {
        "format": FORMAT_TAG,
        "specs": {key: spec_to_dict(spec) for key, spec in specs.items()},
        "params": {key: net.state_dict() for key, net in nets.items()},
        "optim": {key: opt.state_dict() for key, opt in optims.items()},
        "epoch": int(epoch),
        "step": int(step),
        "seed": int(seed),
        "torch_rng": torch.get_rng_state(),
        "config": dict(config or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise ConfigError(f"{path} is not a {FORMAT_TAG} archive")
    return Checkpoint(
        specs={key: spec_from_dict(d) for key, d in payload["specs"].items()},
        params=payload["params"],
        optim=payload.get("optim", {}),
        epoch=payload["epoch"],
        step=payload.get("step", 0),
        seed=payload["seed"],
        torch_rng=payload["torch_rng"],
        config=payload.get("config", {}),
    )


@dataclass
class NetworkBundle:
    global_generator: torch.nn.Module
    local_generator: torch.nn.Module
    disc_global: torch.nn.Module
    disc_local: torch.nn.Module

    def as_dict(self) -> dict:
        return {
            "global_generator": self.global_generator,
            "local_generator": self.local_generator,
            "disc_global": self.disc_global,
            "disc_local": self.disc_local,
        }


def restore_networks(ckpt: Checkpoint, device: str = "cpu", train: bool = False) -> NetworkBundle:
    """Rebuild the four networks from a checkpoint and load their parameters."""
    nets = {}
    for key in NET_KEYS:
        if key not in ckpt.specs:
            raise ConfigError(f"checkpoint is missing the {key} spec")
        net = build_network(ckpt.specs[key], seed=0)
        net.load_state_dict(ckpt.params[key])
        net.to(device)
        net.train(train)
        nets[key] = net
    return NetworkBundle(**nets)
