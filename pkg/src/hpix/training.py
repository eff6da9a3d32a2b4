"""Objectives and the alternating optimization loop for both GAN stages.

Per step: both discriminators update on detached generator outputs, then
both generators update on adversarial + weighted L1 terms (the coarse
stage additionally averages L1 over its supervision heads). By default
the refiner's loss does not backpropagate into the coarse generator; a
config flag switches to joint end-to-end routing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from . import data as data_mod
from .checkpoint import NET_KEYS, load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericError, ShapeError
from .model import (
    DiscriminatorSpec,
    GeneratorOutput,
    GlobalGeneratorSpec,
    LocalGeneratorSpec,
    build_network,
)

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    lambda_l1: float = 100.0
    lambda_ds: float = 100.0

    def __post_init__(self):
        # zero is tolerated as a degenerate ablation value
        for name, value in (("lambda_l1", self.lambda_l1), ("lambda_ds", self.lambda_ds)):
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be a non-negative finite number, got {value}")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1
    seed: int = 0
    checkpoint_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)
    learning_rate: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    joint_routing: bool = False
    baseline_pix2pix: bool = False
    augment: bool = True
    image_size: int = 256
    global_spec: GlobalGeneratorSpec = field(default_factory=GlobalGeneratorSpec)
    local_spec: LocalGeneratorSpec = field(default_factory=LocalGeneratorSpec)
    disc_spec: DiscriminatorSpec = field(default_factory=DiscriminatorSpec)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")

    def policy(self) -> data_mod.AugmentationPolicy:
        jitter = max(self.image_size, round(self.image_size * 286 / 256))
        return data_mod.AugmentationPolicy(
            jitter_resize=jitter, crop=self.image_size, enabled=self.augment
        )


LOSS_COLUMNS = (
    "loss_G_adv",
    "loss_G_l1",
    "loss_G_ds",
    "loss_H_adv",
    "loss_H_l1",
    "loss_DG",
    "loss_DH",
)


@dataclass
class StepReport:
    epoch: int
    step: int
    loss_G_adv: float
    loss_G_l1: float
    loss_G_ds: float
    loss_H_adv: float
    loss_H_l1: float
    loss_DG: float
    loss_DH: float

    def losses(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in LOSS_COLUMNS}


def adversarial_loss(logits: torch.Tensor, target_is_real: bool) -> torch.Tensor:
    """Mean BCE of sigmoid(logits) against a constant real/fake target.

    Evaluated in logit form, so it stays finite for any finite input.
    """
    if not torch.isfinite(logits).all():
        raise NumericError("adversarial_loss: non-finite logits")
    target = torch.ones_like(logits) if target_is_real else torch.zeros_like(logits)
    return F.binary_cross_entropy_with_logits(logits, target)


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ShapeError(f"l1_loss shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.mean(torch.abs(pred - target))


def generator_global_loss(map_target, g_out: GeneratorOutput, fake_logits, weights: LossWeights):
    """Coarse-stage generator objective: adversarial + L1 + supervision L1 mean.

    Reported components carry their weights, so they sum to the reported
    total and scale linearly with the lambdas.
    """
    if not g_out.supervision_heads:
        raise ConfigError("generator_global_loss requires supervision heads")
    adv = adversarial_loss(fake_logits, target_is_real=True)
    l1 = l1_loss(g_out.final, map_target)
    ds = torch.stack([l1_loss(head, map_target) for head in g_out.supervision_heads]).mean()
    total = adv + weights.lambda_l1 * l1 + weights.lambda_ds * ds
    components = {
        "adv": adv.item(),
        "l1": weights.lambda_l1 * l1.item(),
        "ds": weights.lambda_ds * ds.item(),
    }
    components["total"] = components["adv"] + components["l1"] + components["ds"]
    return total, components


def generator_local_loss(map_target, final, fake_logits, weights: LossWeights):
    """Refiner objective: adversarial + weighted L1."""
    adv = adversarial_loss(fake_logits, target_is_real=True)
    l1 = l1_loss(final, map_target)
    total = adv + weights.lambda_l1 * l1
    components = {"adv": adv.item(), "l1": weights.lambda_l1 * l1.item()}
    components["total"] = components["adv"] + components["l1"]
    return total, components


def discriminator_loss(real_logits, fake_logits) -> torch.Tensor:
    if real_logits.shape != fake_logits.shape:
        raise ShapeError("discriminator_loss: real/fake logit shapes differ")
    return 0.5 * (
        adversarial_loss(real_logits, target_is_real=True)
        + adversarial_loss(fake_logits, target_is_real=False)
    )


class Trainer:
    """Owns the four networks, their optimizers, and the step/epoch counters."""

    def __init__(self, config: TrainConfig, device: str = "cpu"):
        self.config = config
        self.device = device
        self.specs = {
            "global_generator": config.global_spec,
            "local_generator": config.local_spec,
            "disc_global": config.disc_spec,
            "disc_local": config.disc_spec,
        }
        self.nets = {
            key: build_network(spec, seed=config.seed + i).to(device)
            for i, (key, spec) in enumerate(self.specs.items())
        }
        self.optims = {key: self._make_optimizer(net) for key, net in self.nets.items()}
        self.epoch = 0
        self.step = 0

    def _make_optimizer(self, net: nn.Module):
        cfg = self.config
        return torch.optim.Adam(
            net.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2)
        )

    def load(self, ckpt) -> None:
        for key in NET_KEYS:
            self.nets[key].load_state_dict(ckpt.params[key])
            if ckpt.optim:
                self.optims[key].load_state_dict(ckpt.optim[key])
        self.epoch = ckpt.epoch
        self.step = ckpt.step
        torch.set_rng_state(ckpt.torch_rng)

    def save(self, path, extra_config=None) -> Path:
        config = {
            "baseline_pix2pix": self.config.baseline_pix2pix,
            "joint_routing": self.config.joint_routing,
        }
        config.update(extra_config or {})
        return save_checkpoint(
            path,
            specs=self.specs,
            nets=self.nets,
            optims=self.optims,
            epoch=self.epoch,
            step=self.step,
            seed=self.config.seed,
            config=config,
        )

    def train_step(self, batch: data_mod.Batch) -> StepReport:
        cfg = self.config
        g_net = self.nets["global_generator"]
        h_net = self.nets["local_generator"]
        dg = self.nets["disc_global"]
        dh = self.nets["disc_local"]
        for net in self.nets.values():
            net.train(True)

        x = batch.satellite.to(self.device)
        y = batch.map_target.to(self.device)
        self.step += 1

        if cfg.baseline_pix2pix:
            g_img = torch.zeros_like(x)
            g_comps = {"adv": 0.0, "l1": 0.0, "ds": 0.0}
            loss_dg_val = 0.0
        else:
            g_out = g_net(x)
            g_img = g_out.final if cfg.joint_routing else g_out.final.detach()

            self.optims["disc_global"].zero_grad(set_to_none=True)
            loss_dg = discriminator_loss(dg(x, y), dg(x, g_out.final.detach()))
            loss_dg.backward()
            self.optims["disc_global"].step()
            loss_dg_val = loss_dg.item()

        h_out = h_net(x, g_img)

        self.optims["disc_local"].zero_grad(set_to_none=True)
        loss_dh = discriminator_loss(dh(x, y), dh(x, h_out.final.detach()))
        loss_dh.backward()
        self.optims["disc_local"].step()

        self.optims["global_generator"].zero_grad(set_to_none=True)
        self.optims["local_generator"].zero_grad(set_to_none=True)
        loss_h, h_comps = generator_local_loss(y, h_out.final, dh(x, h_out.final), cfg.weights)
        if cfg.baseline_pix2pix:
            loss_h.backward()
        else:
            loss_g, g_comps = generator_global_loss(y, g_out, dg(x, g_out.final), cfg.weights)
            (loss_g + loss_h).backward()
            self.optims["global_generator"].step()
        self.optims["local_generator"].step()

        report = StepReport(
            epoch=self.epoch + 1,
            step=self.step,
            loss_G_adv=g_comps["adv"],
            loss_G_l1=g_comps["l1"],
            loss_G_ds=g_comps["ds"],
            loss_H_adv=h_comps["adv"],
            loss_H_l1=h_comps["l1"],
            loss_DG=loss_dg_val,
            loss_DH=loss_dh.item(),
        )
        bad = [k for k, v in report.losses().items() if not math.isfinite(v)]
        if bad:
            raise NumericError(
                f"non-finite losses {bad} at epoch {report.epoch} step {report.step}"
            )
        return report


class HistoryWriter:
    """Streams StepReports into a CSV file as they arrive."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow([f.name for f in fields(StepReport)])

    def write(self, report: StepReport) -> None:
        row = asdict(report)
        self._writer.writerow([row[f.name] for f in fields(StepReport)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def train(manifest, config: TrainConfig, out_dir=None, device: str = "cpu",
          resume=None, step_callback=None):
    """Run the full loop; returns (history, final checkpoint path or None).

    With `out_dir` set, writes periodic checkpoints every
    `config.checkpoint_every` epochs, a final checkpoint, and the per-step
    loss history CSV. `resume` restarts from a checkpoint written by this
    function, continuing the RNG streams bit-identically.
    """
    if manifest.count == 0:
        raise ConfigError("training manifest is empty")

    trainer = Trainer(config, device=device)
    if resume is not None:
        ckpt = resume if not isinstance(resume, (str, Path)) else load_checkpoint(resume)
        trainer.load(ckpt)
    else:
        torch.manual_seed(config.seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    writer = HistoryWriter(out_dir / "loss_history.csv") if out_dir else None
    policy = config.policy()

    history = []
    final_path = None
    try:
        for epoch in range(trainer.epoch + 1, config.epochs + 1):
            sums = dict.fromkeys(LOSS_COLUMNS, 0.0)
            count = 0
            for batch in data_mod.batch_iterator(
                manifest, policy, config.batch_size, config.seed, epoch
            ):
                report = trainer.train_step(batch)
                history.append(report)
                if writer:
                    writer.write(report)
                if step_callback:
                    step_callback(report)
                for key, value in report.losses().items():
                    sums[key] += value
                count += 1
            trainer.epoch = epoch
            means = {k: v / count for k, v in sums.items()}
            log.info(
                "epoch %d/%d: %s", epoch, config.epochs,
                " ".join(f"{k}={v:.4f}" for k, v in means.items()),
            )
            if out_dir and epoch % config.checkpoint_every == 0:
                trainer.save(out_dir / f"ckpt_epoch{epoch:04d}.pt")
        if out_dir:
            final_path = trainer.save(out_dir / "ckpt_final.pt")
    finally:
        if writer:
            writer.close()
    return history, final_path
