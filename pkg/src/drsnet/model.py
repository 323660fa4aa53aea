"""DRSNet assembly: encoders, decoder and the skip connections between them."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import (VARIANTS, BlockConfig, DoubleConv, MultiScaleSE, NeckConv,
                     PointwiseConv, SEAttention, conv_bn_relu)

SKIP_MODES = ("asymmetric", "symmetric")
ENCODER_MODES = ("multiscale_se", "seresnet18", "resnet18_bottleneck")
ABLATIONS = ("seresnet18_encoder", "resnet18_bottleneck", "symmetric_skip")

DEFAULT_SCHEDULE = (24, 48, 96, 192)
# MultiScaleSE blocks at the 1/4, 1/8 and 1/16 stages, chosen so each variant
# lands on its published parameter budget.
DEFAULT_DEPTHS = {"A": (1, 3, 4), "B": (1, 3, 4), "C": (1, 3, 2)}
BOTTLENECK_EXPANSION = 4


@dataclass(frozen=True)
class NetworkConfig:
    variant: str = "A"
    channel_schedule: tuple[int, ...] = DEFAULT_SCHEDULE
    blocks_per_stage: tuple[int, ...] | None = None
    input_size: tuple[int, int] = (192, 128)  # (width, height)
    skip_mode: str = "asymmetric"
    encoder_mode: str = "multiscale_se"
    se_reduction: int = 4
    full_res_skip: bool = False
    project_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(int(c) for c in self.channel_schedule))
        if self.blocks_per_stage is None:
            depths = DEFAULT_DEPTHS.get(self.variant, (1,) * self.stages)
            if len(depths) != self.stages:
                depths = tuple(depths[:self.stages]) + (depths[-1],) * max(0, self.stages - len(depths))
            object.__setattr__(self, "blocks_per_stage", tuple(depths))
        else:
            object.__setattr__(self, "blocks_per_stage", tuple(int(b) for b in self.blocks_per_stage))
        object.__setattr__(self, "input_size", tuple(int(s) for s in self.input_size))
        self.validate()

    @property
    def stem_channels(self) -> int:
        return self.channel_schedule[0]

    @property
    def stages(self) -> int:
        return len(self.channel_schedule) - 1

    @property
    def downsample_factors(self) -> tuple[int, ...]:
        return (4,) + (2,) * (self.stages - 1)

    @property
    def total_stride(self) -> int:
        return 4 * 2 ** (self.stages - 1)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.encoder_mode not in ENCODER_MODES:
            raise ValueError(f"encoder_mode must be one of {ENCODER_MODES}, got {self.encoder_mode!r}")
        sched = self.channel_schedule
        if len(sched) < 2:
            raise ValueError("channel_schedule needs the stem width plus at least one encoder stage")
        for a, b in zip(sched, sched[1:]):
            if b != 2 * a:
                raise ValueError(f"each downsample must double the channels, got schedule {sched}")
        if len(self.blocks_per_stage) != self.stages or min(self.blocks_per_stage) < 1:
            raise ValueError(f"blocks_per_stage needs {self.stages} positive entries, got {self.blocks_per_stage}")
        check_input_size(self.input_size, self.total_stride)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_schedule"] = list(self.channel_schedule)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        for key in ("channel_schedule", "blocks_per_stage", "input_size"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def check_input_size(size: Sequence[int], stride: int = 16) -> None:
    w, h = size
    if w <= 0 or h <= 0 or w % stride or h % stride:
        raise ValueError(f"input size {w}x{h} is not divisible by {stride}")


class SegmentationOutput(NamedTuple):
    probabilities: torch.Tensor
    logits: torch.Tensor


class Resample(nn.Module):
    """Bilinear resize by an integer factor (up or down)."""

    def __init__(self, factor: int, mode: str):
        super().__init__()
        if mode not in ("up", "down"):
            raise ValueError(mode)
        self.factor, self.mode = factor, mode

    def forward(self, x):
        scale = self.factor if self.mode == "up" else 1.0 / self.factor
        return F.interpolate(x, scale_factor=scale, mode="bilinear", align_corners=False)

    def extra_repr(self):
        return f"{self.mode} x{self.factor}"


class AsymmetricSkip(nn.Module):
    """Upsample a deeper encoder map, project it with a 1x1 conv, add to the decoder map.

    Bilinear weights sum to one, so the 1x1 projection commutes exactly with
    the upsampling. With ``project_first`` the projection runs on the small
    map, which gives the same output for a fraction of the work.
    """

    def __init__(self, enc_channels: int, dec_channels: int, factor: int = 2, project_first: bool = True):
        super().__init__()
        self.factor = factor
        self.project_first = project_first
        self.up = Resample(factor, "up")
        self.proj = PointwiseConv(enc_channels, dec_channels)

    def forward(self, enc, dec):
        eh, ew = enc.shape[-2:]
        if (eh * self.factor, ew * self.factor) != tuple(dec.shape[-2:]):
            raise ValueError(f"encoder map {tuple(enc.shape[-2:])} is not 1/{self.factor} "
                             f"of decoder map {tuple(dec.shape[-2:])}")
        z = self.up(self.proj(enc)) if self.project_first else self.proj(self.up(enc))
        return dec + z

    def elementwise_ops(self, inputs, output):
        return output.numel()


class SymmetricSkip(nn.Module):
    """UNet-style same-level merge: plain elementwise addition."""

    def forward(self, enc, dec):
        if enc.shape != dec.shape:
            raise ValueError(f"symmetric skip needs equal shapes, got {tuple(enc.shape)} and {tuple(dec.shape)}")
        return dec + enc

    def elementwise_ops(self, inputs, output):
        return output.numel()


def asymmetric_skip(encoder_feat, decoder_feat, factor: int = 2, project_first: bool = True):
    skip = AsymmetricSkip(encoder_feat.shape[1], decoder_feat.shape[1], factor, project_first)
    return skip.to(decoder_feat.device, decoder_feat.dtype)(encoder_feat, decoder_feat)


def symmetric_skip(encoder_feat, decoder_feat):
    return SymmetricSkip()(encoder_feat, decoder_feat)


# -- encoders ---------------------------------------------------------------
# Every encoder returns [full-res map, 1/4 map, 1/8 map, ...] with widths
# matching its channel schedule.

class MultiScaleSEEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        sched = cfg.channel_schedule
        self.stem = DoubleConv(3, sched[0])
        self.stages = nn.ModuleList()
        for i, (factor, depth) in enumerate(zip(cfg.downsample_factors, cfg.blocks_per_stage)):
            c_in, c_out = sched[i], sched[i + 1]
            blocks = [MultiScaleSE(BlockConfig(cfg.variant, c_in, c_out, cfg.se_reduction))]
            blocks += [MultiScaleSE(BlockConfig(cfg.variant, c_out, c_out, cfg.se_reduction))
                       for _ in range(depth - 1)]
            self.stages.append(nn.Sequential(Resample(factor, "down"), *blocks))

    def forward(self, x):
        feats = [self.stem(x)]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


class SEBasicBlock(nn.Module):
    """ResNet basic block (two 3x3 convs) with an SE gate before the residual add."""

    def __init__(self, c_in: int, c_out: int, reduction: int = 4):
        super().__init__()
        self.conv1 = conv_bn_relu(c_in, c_out, 3)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.se = SEAttention(c_out, reduction)
        self.shortcut = nn.Identity() if c_in == c_out else nn.Sequential(
            nn.Conv2d(c_in, c_out, 1, bias=False), nn.BatchNorm2d(c_out))
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        y = self.se(self.bn2(self.conv2(self.conv1(x))))
        return self.act(y + self.shortcut(x))

    def elementwise_ops(self, inputs, output):
        return output.numel()


class Bottleneck(nn.Module):
    """1x1 reduce -> 3x3 -> 1x1 expand residual unit."""

    def __init__(self, c_in: int, c_out: int, expansion: int | None = None):
        expansion = expansion or BOTTLENECK_EXPANSION
        super().__init__()
        mid = c_out // expansion
        self.body = nn.Sequential(
            *conv_bn_relu(c_in, mid, 1),
            *conv_bn_relu(mid, mid, 3),
            nn.Conv2d(mid, c_out, 1, bias=False),
            nn.BatchNorm2d(c_out),
        )
        self.shortcut = nn.Identity() if c_in == c_out else nn.Sequential(
            nn.Conv2d(c_in, c_out, 1, bias=False), nn.BatchNorm2d(c_out))
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.body(x) + self.shortcut(x))

    def elementwise_ops(self, inputs, output):
        return output.numel()


class ResidualEncoder(nn.Module):
    """ResNet18 layout: four stages of two residual units each.

    The first stage runs at full resolution after the DoubleConv stem; the
    others follow the same bilinear 1/4, 1/8, 1/16 pyramid as DRSNet.
    """

    def __init__(self, cfg: NetworkConfig, unit: str):
        super().__init__()
        sched = cfg.channel_schedule
        make = {
            "se_basic": lambda i, o: SEBasicBlock(i, o, cfg.se_reduction),
            "bottleneck": lambda i, o: Bottleneck(i, o),
        }[unit]
        self.stem = DoubleConv(3, sched[0])
        self.layer0 = nn.Sequential(make(sched[0], sched[0]), make(sched[0], sched[0]))
        self.stages = nn.ModuleList(
            nn.Sequential(Resample(f, "down"), make(sched[i], sched[i + 1]), make(sched[i + 1], sched[i + 1]))
            for i, f in enumerate(cfg.downsample_factors)
        )

    def forward(self, x):
        feats = [self.layer0(self.stem(x))]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


# -- full network -----------------------------------------------------------

class DecoderStage(nn.Module):
    """Upsample, halve channels with a 1x1 conv, then DoubleConv."""

    def __init__(self, c_in: int, c_out: int, factor: int, project_first: bool = True):
        super().__init__()
        self.project_first = project_first
        self.up = Resample(factor, "up")
        self.reduce = PointwiseConv(c_in, c_out)
        self.conv = DoubleConv(c_out, c_out)

    def forward(self, x):
        # see AsymmetricSkip for why the order of up/reduce is free
        x = self.up(self.reduce(x)) if self.project_first else self.reduce(self.up(x))
        return self.conv(x)


class DRSNet(nn.Module):
    """Encoder-decoder foreground segmenter. ``forward`` returns logits."""

    def __init__(self, cfg: NetworkConfig | None = None):
        super().__init__()
        cfg = cfg or NetworkConfig()
        self.cfg = cfg
        sched = cfg.channel_schedule
        if cfg.encoder_mode == "multiscale_se":
            self.encoder = MultiScaleSEEncoder(cfg)
        elif cfg.encoder_mode == "seresnet18":
            self.encoder = ResidualEncoder(cfg, "se_basic")
        else:
            self.encoder = ResidualEncoder(cfg, "bottleneck")

        factors = cfg.downsample_factors
        self.decoder = nn.ModuleList()
        self.skips = nn.ModuleDict()
        for level in reversed(range(cfg.stages)):
            self.decoder.append(DecoderStage(sched[level + 1], sched[level], factors[level], cfg.project_first))
            if level == 0 and not cfg.full_res_skip:
                continue
            if cfg.skip_mode == "asymmetric":
                self.skips[str(level)] = AsymmetricSkip(sched[level + 1], sched[level], factors[level],
                                                        cfg.project_first)
            else:
                self.skips[str(level)] = SymmetricSkip()
        self.neck = NeckConv(sched[0], sched[0])
        self.head = PointwiseConv(sched[0], 1)

    def forward(self, x):
        check_image_batch(x, self.cfg.total_stride)
        feats = self.encoder(x)
        y = feats[-1]
        for stage, level in zip(self.decoder, reversed(range(self.cfg.stages))):
            y = stage(y)
            skip = self.skips[str(level)] if str(level) in self.skips else None
            if skip is None:
                continue
            # asymmetric: deeper encoder map; symmetric: same-level map
            enc = feats[level + 1] if self.cfg.skip_mode == "asymmetric" else feats[level]
            y = skip(enc, y)
        return self.head(self.neck(y))

    def elementwise_ops(self, inputs, output):
        # sigmoid applied to the logits at inference
        return output.numel()


def check_image_batch(x: torch.Tensor, stride: int = 16) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an image batch of shape (B, 3, H, W), got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    check_input_size((w, h), stride)


def build_drsnet(cfg: NetworkConfig | None = None) -> DRSNet:
    model = DRSNet(cfg)
    init_weights(model)
    return model


def build_ablation(kind: str, **overrides) -> DRSNet:
    """Control networks: DRSNet(A) with one structural piece swapped out.

    The residual-encoder controls keep the upsample-then-project decoder order
    of a plain reference build; only the DRSNet family uses ``project_first``.
    """
    if kind == "symmetric_skip":
        cfg = NetworkConfig(variant="A", skip_mode="symmetric", **overrides)
    elif kind == "seresnet18_encoder":
        overrides.setdefault("project_first", False)
        cfg = NetworkConfig(variant="A", encoder_mode="seresnet18", **overrides)
    elif kind == "resnet18_bottleneck":
        overrides.setdefault("project_first", False)
        overrides.setdefault("channel_schedule", tuple(BOTTLENECK_EXPANSION * c for c in DEFAULT_SCHEDULE))
        cfg = NetworkConfig(variant="A", encoder_mode="resnet18_bottleneck", **overrides)
    else:
        raise ValueError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")
    return build_drsnet(cfg)


def init_weights(model: nn.Module) -> None:
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def segment(model: DRSNet, image: torch.Tensor) -> SegmentationOutput:
    """Run the network and return per-pixel foreground probabilities."""
    logits = model(image)
    return SegmentationOutput(torch.sigmoid(logits), logits)
