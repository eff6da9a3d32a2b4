"""Network definitions: nested global generator, local refiner, PatchGAN.

The global generator is a triangular grid of nodes x(i,j), existing when
i + j <= depth - 1. Column j=0 is a stride-2 encoder chain; every node
with j >= 1 decodes the node below-left of it, concatenates all earlier
outputs at its own level, and fuses them with a stride-1 conv. Top-row
nodes x(0,1..depth-2) emit auxiliary full-resolution images used as
supervision targets; x(0,depth-1) produces the final image.

The local generator is a plain encoder/decoder with skip connections over
a 6-channel input (satellite stacked with the coarse generated map). Both
discriminators share one PatchGAN layout that scores 26x26 overlapping
patches of a 256x256 conditional pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericError, ShapeError, SpecError

PIX2PIX_CHANNELS = (64, 128, 256, 512, 512, 512, 512, 512)


@dataclass(frozen=True)
class GlobalGeneratorSpec:
    depth: int = 8
    level_channels: tuple = PIX2PIX_CHANNELS
    input_channels: int = 3
    output_channels: int = 3
    supervision_columns: tuple = ()  # default: every top-row node but the last

    def __post_init__(self):
        if self.depth < 2:
            raise SpecError(f"depth must be >= 2, got {self.depth}")
        if len(self.level_channels) != self.depth:
            raise SpecError(
                f"level_channels has {len(self.level_channels)} entries for depth {self.depth}"
            )
        if any(c < 1 for c in self.level_channels):
            raise SpecError("level_channels must be positive")
        columns = self.supervision_columns or tuple(range(1, self.depth - 1))
        if any(j < 1 or j > self.depth - 2 for j in columns):
            raise SpecError(f"supervision columns {columns} outside 1..{self.depth - 2}")
        object.__setattr__(self, "supervision_columns", tuple(sorted(columns)))


@dataclass(frozen=True)
class LocalGeneratorSpec:
    depth: int = 8
    level_channels: tuple = PIX2PIX_CHANNELS
    input_channels: int = 6
    output_channels: int = 3

    def __post_init__(self):
        if self.depth < 2:
            raise SpecError(f"depth must be >= 2, got {self.depth}")
        if len(self.level_channels) != self.depth:
            raise SpecError(
                f"level_channels has {len(self.level_channels)} entries for depth {self.depth}"
            )
        if self.input_channels != 2 * self.output_channels:
            raise SpecError("local generator input must stack two images (2x output channels)")


@dataclass(frozen=True)
class DiscriminatorSpec:
    block_channels: tuple = (64, 128, 256, 512, 1)
    strides: tuple = (2, 2, 2, 1, 1)
    paddings: tuple = (1, 1, 1, 0, 0)
    leaky_slope: float = 0.2
    input_channels: int = 6
    kernel: int = 4

    def __post_init__(self):
        if len(self.block_channels) != 5 or len(self.strides) != 5 or len(self.paddings) != 5:
            raise SpecError("discriminator needs exactly 5 blocks")
        if self.block_channels[-1] != 1:
            raise SpecError("final discriminator block must emit a single channel")
        if self.strides[-1] != 1:
            raise SpecError("final discriminator block must use stride 1")


@dataclass
class GeneratorOutput:
    final: torch.Tensor
    supervision_heads: list = field(default_factory=list)


def _encoder_block(in_ch, out_ch, norm=True, activation=True):
    layers = [
        nn.ReflectionPad2d(1),
        nn.Conv2d(in_ch, out_ch, kernel_size=4, stride=2, bias=not norm),
    ]
    if norm:
        layers.append(nn.InstanceNorm2d(out_ch, affine=True))
    if activation:
        layers.append(nn.LeakyReLU(0.2, inplace=True))
    return nn.Sequential(*layers)


def _decoder_block(in_ch, out_ch, dropout=0.5):
    layers = [
        nn.ConvTranspose2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1, bias=False),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    ]
    if dropout > 0:
        layers.append(nn.Dropout(dropout))
    return nn.Sequential(*layers)


def _fuse_block(in_ch, out_ch):
    # stride-1 encoder-style conv that merges a node's gathered inputs
    return nn.Sequential(
        nn.ReflectionPad2d(1),
        nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=1, bias=False),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.LeakyReLU(0.2, inplace=True),
    )


def _output_block(in_ch, out_ch):
    return nn.Sequential(
        nn.ConvTranspose2d(in_ch, out_ch, kernel_size=4, stride=2, padding=1, bias=True),
        nn.Tanh(),
    )


def _ensure_batched(x, channels, name):
    if not torch.is_tensor(x):
        raise ShapeError(f"{name}: expected a tensor, got {type(x).__name__}")
    if x.dim() == 3:
        x = x.unsqueeze(0)
        squeeze = True
    elif x.dim() == 4:
        squeeze = False
    else:
        raise ShapeError(f"{name}: expected CxHxW or NxCxHxW, got {tuple(x.shape)}")
    if x.shape[1] != channels:
        raise ShapeError(f"{name}: expected {channels} channels, got {x.shape[1]}")
    if not torch.isfinite(x).all():
        raise NumericError(f"{name}: input contains non-finite values")
    return x, squeeze


class GlobalGenerator(nn.Module):
    """Nested encoder/decoder grid with deep supervision heads."""

    def __init__(self, spec: GlobalGeneratorSpec):
        super().__init__()
        self.spec = spec
        d = spec.depth
        ch = spec.level_channels

        self.enc = nn.ModuleList()
        for i in range(d):
            in_ch = spec.input_channels if i == 0 else ch[i - 1]
            self.enc.append(
                _encoder_block(in_ch, ch[i], norm=(0 < i < d - 1), activation=(i < d - 1))
            )

        self.up = nn.ModuleDict()
        self.fuse = nn.ModuleDict()
        for j in range(1, d - 1):
            for i in range(0, d - j):
                self.up[f"{i}_{j}"] = _decoder_block(ch[i + 1], ch[i])
                self.fuse[f"{i}_{j}"] = _fuse_block((j + 1) * ch[i], ch[i])
        # final node x(0, d-1): decode x(1, d-2), gather the whole top row,
        # and map straight to the output image at full resolution
        self.up[f"0_{d - 1}"] = _decoder_block(ch[1], ch[0])
        self.out = _output_block(d * ch[0], spec.output_channels)

        self.heads = nn.ModuleDict()
        for j in spec.supervision_columns:
            self.heads[str(j)] = nn.Conv2d(ch[0], spec.output_channels, kernel_size=1)

    def forward(self, x) -> GeneratorOutput:
        spec = self.spec
        x, squeeze = _ensure_batched(x, spec.input_channels, "global generator input")
        h, w = x.shape[2], x.shape[3]
        factor = 2**spec.depth
        if h % factor or w % factor or h < factor or w < factor:
            raise ShapeError(
                f"input {h}x{w} does not survive {spec.depth} halvings (needs a multiple of {factor})"
            )

        grid = {}
        feat = x
        for i in range(spec.depth):
            feat = self.enc[i](feat)
            grid[(i, 0)] = feat

        for j in range(1, spec.depth - 1):
            for i in range(0, spec.depth - j):
                up = self.up[f"{i}_{j}"](grid[(i + 1, j - 1)])
                merged = torch.cat([up] + [grid[(i, k)] for k in range(j)], dim=1)
                grid[(i, j)] = self.fuse[f"{i}_{j}"](merged)

        up = self.up[f"0_{spec.depth - 1}"](grid[(1, spec.depth - 2)])
        merged = torch.cat([up] + [grid[(0, k)] for k in range(spec.depth - 1)], dim=1)
        final = self.out(merged)

        heads = []
        for j in spec.supervision_columns:
            feat = F.interpolate(grid[(0, j)], scale_factor=2, mode="bilinear", align_corners=False)
            heads.append(torch.tanh(self.heads[str(j)](feat)))

        if squeeze:
            final = final.squeeze(0)
            heads = [h_.squeeze(0) for h_ in heads]
        return GeneratorOutput(final=final, supervision_heads=heads)


class LocalGenerator(nn.Module):
    """Encoder/decoder with skips over the stacked (satellite, coarse map) input."""

    def __init__(self, spec: LocalGeneratorSpec):
        super().__init__()
        self.spec = spec
        d = spec.depth
        ch = spec.level_channels

        self.enc = nn.ModuleList()
        for i in range(d):
            in_ch = spec.input_channels if i == 0 else ch[i - 1]
            self.enc.append(
                _encoder_block(in_ch, ch[i], norm=(0 < i < d - 1), activation=(i < d - 1))
            )
        self.dec = nn.ModuleList()
        for i in range(d - 2, -1, -1):
            in_ch = ch[d - 1] if i == d - 2 else 2 * ch[i + 1]
            self.dec.append(_decoder_block(in_ch, ch[i]))
        self.out = _output_block(2 * ch[0], spec.output_channels)

    def forward(self, x, g) -> GeneratorOutput:
        spec = self.spec
        img_ch = spec.input_channels // 2
        x, squeeze = _ensure_batched(x, img_ch, "local generator input")
        g, _ = _ensure_batched(g, img_ch, "local generator coarse input")
        if x.shape[2:] != g.shape[2:] or x.shape[0] != g.shape[0]:
            raise ShapeError(
                f"mismatched input sizes {tuple(x.shape)} vs {tuple(g.shape)}"
            )
        h, w = x.shape[2], x.shape[3]
        factor = 2**spec.depth
        if h % factor or w % factor or h < factor or w < factor:
            raise ShapeError(
                f"input {h}x{w} does not survive {spec.depth} halvings (needs a multiple of {factor})"
            )

        feat = torch.cat([x, g], dim=1)
        skips = []
        for enc in self.enc:
            feat = enc(feat)
            skips.append(feat)
        for step, dec in enumerate(self.dec):
            level = spec.depth - 2 - step
            feat = torch.cat([dec(feat), skips[level]], dim=1)
        final = self.out(feat)
        if squeeze:
            final = final.squeeze(0)
        return GeneratorOutput(final=final, supervision_heads=[])


class PatchDiscriminator(nn.Module):
    """Five-block conditional PatchGAN emitting raw patch logits."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        blocks = []
        in_ch = spec.input_channels
        for b, (out_ch, stride, pad) in enumerate(
            zip(spec.block_channels, spec.strides, spec.paddings)
        ):
            norm = 0 < b < 4
            layers = [
                nn.Conv2d(in_ch, out_ch, spec.kernel, stride=stride, padding=pad, bias=not norm)
            ]
            if norm:
                layers.append(nn.InstanceNorm2d(out_ch, affine=True))
            if b < 4:
                layers.append(nn.LeakyReLU(spec.leaky_slope, inplace=True))
            blocks.append(nn.Sequential(*layers))
            in_ch = out_ch
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x, y) -> torch.Tensor:
        img_ch = self.spec.input_channels // 2
        x, squeeze = _ensure_batched(x, img_ch, "discriminator input")
        y, _ = _ensure_batched(y, img_ch, "discriminator target")
        if x.shape != y.shape:
            raise ShapeError(f"mismatched pair shapes {tuple(x.shape)} vs {tuple(y.shape)}")

        h, w = x.shape[2], x.shape[3]
        for stride, pad in zip(self.spec.strides, self.spec.paddings):
            h = (h + 2 * pad - self.spec.kernel) // stride + 1
            w = (w + 2 * pad - self.spec.kernel) // stride + 1
            if h < 1 or w < 1:
                raise ShapeError(f"input {tuple(x.shape[2:])} too small for the patch ladder")

        feat = torch.cat([x, y], dim=1)
        for block in self.blocks:
            feat = block(feat)
        return feat.squeeze(0) if squeeze else feat


_NETWORKS = {
    GlobalGeneratorSpec: GlobalGenerator,
    LocalGeneratorSpec: LocalGenerator,
    DiscriminatorSpec: PatchDiscriminator,
}


def init_parameters(net: nn.Module, seed: int) -> None:
    """Gaussian(0, 0.02) conv init, Gaussian(1, 0.02) norm scales, zero shifts."""
    gen = torch.Generator().manual_seed(seed)
    for module in net.modules():
        if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            module.weight.data.normal_(0.0, 0.02, generator=gen)
            if module.bias is not None:
                module.bias.data.zero_()
        elif isinstance(module, nn.InstanceNorm2d) and module.affine:
            module.weight.data.normal_(1.0, 0.02, generator=gen)
            module.bias.data.zero_()


def build_network(spec, seed: int = 0) -> nn.Module:
    """Construct and deterministically initialize the network a spec describes."""
    try:
        cls = _NETWORKS[type(spec)]
    except KeyError:
        raise SpecError(f"no network for spec type {type(spec).__name__}") from None
    net = cls(spec)
    init_parameters(net, seed)
    return net
