"""Convolutional building blocks for DRSNet.

Every block here preserves spatial size. Resolution changes in the network
happen only through bilinear interpolation in ``drsnet.model``.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

VARIANTS = ("A", "B", "C")
BRANCH_DILATION = 2


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    dilation: int = 1
    factorized: bool = True

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be positive, got {self.in_channels}->{self.out_channels}")
        if self.kernel_size not in (1, 3, 5):
            raise ValueError(f"kernel_size must be one of 1, 3, 5, got {self.kernel_size}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        if self.factorized and self.kernel_size == 1:
            raise ValueError("a factorized convolution needs kernel_size > 1")

    @property
    def padding(self) -> int:
        return self.dilation * (self.kernel_size - 1) // 2


@dataclass(frozen=True)
class BlockConfig:
    variant: str
    c_in: int
    c_out: int
    se_reduction: int = 4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown MultiScaleSE variant {self.variant!r}")
        n = self.branches
        if self.c_out % n:
            raise ValueError(f"variant {self.variant} needs c_out divisible by {n}, got {self.c_out}")
        if self.variant == "C" and self.c_in % n:
            raise ValueError(f"variant C splits its input three ways, got c_in={self.c_in}")
        if self.c_out % self.se_reduction:
            raise ValueError(f"se_reduction {self.se_reduction} does not divide {self.c_out}")

    @property
    def branches(self) -> int:
        return 3 if self.variant == "C" else 2


def _check_channels(x: torch.Tensor, expected: int, who: str) -> None:
    if x.dim() != 4:
        raise ValueError(f"{who} expects a (B, C, H, W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != expected:
        raise ValueError(f"{who} expects {expected} input channels, got {x.shape[1]}")


class AsymConv(nn.Module):
    """n x 1 convolution followed by 1 x n, same padding.

    The first convolution maps ``in_channels -> out_channels``; the second keeps
    ``out_channels``. No normalization in between: this is the bare factorized
    operator, wrapped with BN/ReLU where the blocks need it.
    """

    def __init__(self, spec: ConvSpec, bias: bool = True):
        super().__init__()
        if not spec.factorized:
            raise ValueError("AsymConv requires a factorized ConvSpec")
        self.spec = spec
        n, d, p = spec.kernel_size, spec.dilation, spec.padding
        self.vertical = nn.Conv2d(spec.in_channels, spec.out_channels, (n, 1),
                                  padding=(p, 0), dilation=(d, 1), bias=bias)
        self.horizontal = nn.Conv2d(spec.out_channels, spec.out_channels, (1, n),
                                    padding=(0, p), dilation=(1, d), bias=bias)

    def forward(self, x):
        _check_channels(x, self.spec.in_channels, "AsymConv")
        return self.horizontal(self.vertical(x))


def asym_conv(x: torch.Tensor, spec: ConvSpec) -> torch.Tensor:
    """Functional form: builds a freshly initialised AsymConv and applies it."""
    return AsymConv(spec).to(x.device, x.dtype)(x)


def conv_bn_relu(c_in: int, c_out: int, kernel_size=1, dilation=1) -> nn.Sequential:
    if isinstance(kernel_size, int):
        kernel_size = (kernel_size, kernel_size)
    if isinstance(dilation, int):
        dilation = (dilation, dilation)
    padding = tuple(d * (k - 1) // 2 for k, d in zip(kernel_size, dilation))
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size, padding=padding, dilation=dilation, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


def asym_branch(c_in: int, c_out: int, n: int, dilation: int = BRANCH_DILATION) -> nn.Sequential:
    """Factorized n x n convolution with BN + ReLU after each 1-D stage."""
    if n == 1:
        return conv_bn_relu(c_in, c_out, 1)
    return nn.Sequential(
        *conv_bn_relu(c_in, c_out, (n, 1), (dilation, 1)),
        *conv_bn_relu(c_out, c_out, (1, n), (1, dilation)),
    )


class SEAttention(nn.Module):
    """Squeeze-and-excitation gate: GAP -> FC -> ReLU -> FC -> sigmoid -> scale."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"reduction {reduction} does not divide {channels} channels")
        self.channels = channels
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def gate(self, x):
        s = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(s))))

    def forward(self, x):
        _check_channels(x, self.channels, "SEAttention")
        return x * self.gate(x)[:, :, None, None]


def se_attention(x: torch.Tensor, reduction: int) -> torch.Tensor:
    return SEAttention(x.shape[1], reduction).to(x.device, x.dtype)(x)


class MultiScaleSE(nn.Module):
    """Multi-branch dilated encoder block.

    Variant A: 1x1 reduction to c_out/2, then a dilated 3x1/1x3 pair on the
    reduced map; the reduced map and the pair output are concatenated.

    Variant B: two branches taken straight from the input. The left one is a
    1x1 projection; the right one carries its own 1x1 followed by the dilated
    3x1/1x3 pair.

    Variant C: the input channels are divided into three groups which pass
    through 1x1, 3x3 and 5x5 factorized dilated convolutions respectively.

    All variants finish with concat -> BatchNorm -> SE.
    """

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.cfg = cfg
        c_in, c_out = cfg.c_in, cfg.c_out
        if cfg.variant == "A":
            h = c_out // 2
            self.reduce = conv_bn_relu(c_in, h, 1)
            self.pair = asym_branch(h, h, 3)
        elif cfg.variant == "B":
            h = c_out // 2
            self.left = conv_bn_relu(c_in, h, 1)
            self.right = nn.Sequential(*conv_bn_relu(c_in, h, 1), *asym_branch(h, h, 3))
        else:
            g, t = c_in // 3, c_out // 3
            self.split = (g, g, g)
            self.paths = nn.ModuleList(asym_branch(g, t, n) for n in (1, 3, 5))
        self.bn = nn.BatchNorm2d(c_out)
        self.se = SEAttention(c_out, cfg.se_reduction)

    def forward(self, x):
        _check_channels(x, self.cfg.c_in, f"MultiScaleSE{self.cfg.variant}")
        if self.cfg.variant == "A":
            r = self.reduce(x)
            y = torch.cat([r, self.pair(r)], dim=1)
        elif self.cfg.variant == "B":
            y = torch.cat([self.left(x), self.right(x)], dim=1)
        else:
            parts = torch.split(x, self.split, dim=1)
            y = torch.cat([path(p) for path, p in zip(self.paths, parts)], dim=1)
        return self.se(self.bn(y))


class _TwoStage(nn.Module):
    # 3x1 conv to `mid` channels, then 1x3 conv to c_out; BN + ReLU after each.
    def __init__(self, c_in: int, mid: int, c_out: int):
        super().__init__()
        self.c_in, self.mid, self.c_out = c_in, mid, c_out
        self.first = conv_bn_relu(c_in, mid, (3, 1))
        self.second = conv_bn_relu(mid, c_out, (1, 3))

    def forward(self, x):
        _check_channels(x, self.c_in, type(self).__name__)
        return self.second(self.first(x))


class DoubleConv(_TwoStage):
    """Asymmetric double convolution whose intermediate width is c_out/2."""

    def __init__(self, c_in: int, c_out: int):
        if c_out % 2:
            raise ValueError(f"DoubleConv needs an even c_out, got {c_out}")
        super().__init__(c_in, c_out // 2, c_out)


class NeckConv(_TwoStage):
    """Same as DoubleConv but the intermediate width is c_in/2."""

    def __init__(self, c_in: int, c_out: int):
        if c_in % 2:
            raise ValueError(f"NeckConv needs an even c_in, got {c_in}")
        super().__init__(c_in, c_in // 2, c_out)


class PointwiseConv(nn.Conv2d):
    """Plain 1x1 convolution with bias."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__(c_in, c_out, 1)

    def forward(self, x):
        _check_channels(x, self.in_channels, "PointwiseConv")
        return super().forward(x)


def double_conv(x: torch.Tensor, c_out: int) -> torch.Tensor:
    return DoubleConv(x.shape[1], c_out).to(x.device, x.dtype)(x)


def neck_conv(x: torch.Tensor, c_out: int) -> torch.Tensor:
    return NeckConv(x.shape[1], c_out).to(x.device, x.dtype)(x)


def pointwise_conv(x: torch.Tensor, c_out: int) -> torch.Tensor:
    return PointwiseConv(x.shape[1], c_out).to(x.device, x.dtype)(x)


def multiscale_se_block(x: torch.Tensor, cfg: BlockConfig) -> torch.Tensor:
    return MultiScaleSE(cfg).to(x.device, x.dtype)(x)
