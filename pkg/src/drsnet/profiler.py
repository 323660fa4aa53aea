"""Parameter and FLOP counting, with optional latency measurement.

FLOPs are counted layer by layer from the shapes seen during one forward
pass. Per-layer rules, in multiply-add units:

* Conv2d: out_h * out_w * out_c * (k_h * k_w * in_c / groups)
* Linear: in_features * out_features per row
* BatchNorm2d: one (scale, shift) multiply-add per element
* bilinear Resample: four multiply-adds per output element

Elementwise work (ReLU, sigmoid, skip/residual additions, SE pooling and
channel scaling) is counted as one op per element and is not multiplied by
the convention factor.
"""
from __future__ import annotations

import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .model import Resample

# Calibrated against DRSNet(A) at 192x128: one multiply-add counts as one FLOP.
FLOP_CONVENTION = 1


@dataclass
class FlopCount:
    macs: int = 0
    elementwise: int = 0
    per_layer: list = field(default_factory=list)

    def total(self, convention: int = FLOP_CONVENTION) -> int:
        return convention * self.macs + self.elementwise


@dataclass
class ProfileReport:
    name: str
    input_size: tuple
    params: int
    flops: int
    flop_convention: str
    mean_ms: float | None = None
    std_ms: float | None = None
    hardware: str | None = None

    @property
    def fps(self) -> float | None:
        return None if not self.mean_ms else 1000.0 / self.mean_ms

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["params_m"] = round(self.params / 1e6, 4)
        d["gflops"] = round(self.flops / 1e9, 4)
        d["fps"] = self.fps
        return d


def count_params(model: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def _layer_cost(module: nn.Module, inputs, output) -> tuple[int, int]:
    if isinstance(module, nn.Conv2d):
        kh, kw = module.kernel_size
        per_out = kh * kw * module.in_channels // module.groups
        return output.numel() * per_out, 0
    if isinstance(module, nn.Linear):
        rows = output.numel() // module.out_features
        return rows * module.in_features * module.out_features, 0
    if isinstance(module, nn.BatchNorm2d):
        return output.numel(), 0
    if isinstance(module, Resample):
        return 4 * output.numel(), 0
    if isinstance(module, (nn.ReLU, nn.Sigmoid)):
        return 0, output.numel()
    if hasattr(module, "elementwise_ops"):
        return 0, int(module.elementwise_ops(inputs, output))
    return 0, 0


def count_flops(model: nn.Module, input_size: tuple[int, int], batch: int = 1) -> FlopCount:
    """Analytic FLOP count for one forward pass at ``input_size`` = (width, height)."""
    w, h = input_size
    result = FlopCount()
    handles = []

    def hook(name):
        def fn(module, inputs, output):
            macs, ew = _layer_cost(module, inputs, output)
            if macs or ew:
                result.macs += macs
                result.elementwise += ew
                result.per_layer.append((name, type(module).__name__, macs, ew))
        return fn

    for name, module in model.named_modules():
        handles.append(module.register_forward_hook(hook(name or "<model>")))
    was_training = model.training
    model.eval()
    try:
        param = next(model.parameters())
        with torch.no_grad():
            model(torch.zeros(batch, 3, h, w, dtype=param.dtype, device=param.device))
    finally:
        for hd in handles:
            hd.remove()
        model.train(was_training)
    return result


def hardware_id(device: torch.device | str = "cpu") -> str:
    device = torch.device(device)
    if device.type == "cuda":
        return torch.cuda.get_device_name(device)
    return f"{platform.processor() or platform.machine()} ({torch.get_num_threads()} threads)"


def time_inference(model: nn.Module, input_size: tuple[int, int], n_warmup: int = 5,
                   n_runs: int = 20, batch: int = 1) -> tuple[float, float]:
    """Mean and standard deviation of per-forward wall-clock time in milliseconds."""
    if n_runs < 10:
        raise ValueError("time_inference needs n_runs >= 10")
    w, h = input_size
    param = next(model.parameters())
    x = torch.rand(batch, 3, h, w, dtype=param.dtype, device=param.device)
    sync = torch.cuda.synchronize if param.device.type == "cuda" else (lambda: None)
    was_training = model.training
    model.eval()
    times = []
    try:
        with torch.no_grad():
            for _ in range(n_warmup):
                model(x)
            sync()
            for _ in range(n_runs):
                t0 = time.perf_counter()
                model(x)
                sync()
                times.append((time.perf_counter() - t0) * 1000.0)
    finally:
        model.train(was_training)
    return statistics.fmean(times), statistics.stdev(times)


def profile(model: nn.Module, input_size: tuple[int, int], name: str = "model",
            timing: bool = False, n_warmup: int = 5, n_runs: int = 20) -> ProfileReport:
    flops = count_flops(model, input_size).total()
    report = ProfileReport(name=name, input_size=tuple(input_size), params=count_params(model),
                           flops=flops, flop_convention=f"mult-add={FLOP_CONVENTION}")
    if timing:
        report.mean_ms, report.std_ms = time_inference(model, input_size, n_warmup, n_runs)
        report.hardware = hardware_id(next(model.parameters()).device)
    return report
