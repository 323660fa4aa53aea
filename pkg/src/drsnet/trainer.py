"""Training loop with its learning-rate schedule, plus evaluation."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, Dataset

from .checkpoint import save_checkpoint
from .data import Sample, sample_rng
from .metrics import (bce_loss, bce_with_logits, binarize, confusion, foreground_accuracy,
                      foreground_recall, is_degenerate, miou)
from .rain import STREAK_COLOR, add_rain

log = logging.getLogger(__name__)

MIN_SPLIT_SIZE = 10
AVERAGING_MODES = ("per_image", "pooled")
RAIN_MODES = ("online", "none")


@dataclass
class TrainConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    base_lr: float = 0.008
    batch_size: int = 20
    epochs: int = 20
    split_ratio: float = 0.9
    warmup_epochs: int = 1
    seed: int = 0
    input_size: tuple[int, int] = (192, 128)
    loss_reduction: str = "mean"
    rain_mode: str = "online"
    streak_color: float = STREAK_COLOR
    threshold: float = 0.5
    averaging: str = "per_image"
    eval_every: int = 1
    num_workers: int = 0
    device: str = "cpu"

    def __post_init__(self):
        self.input_size = tuple(int(s) for s in self.input_size)
        self.validate()

    def validate(self) -> None:
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")
        if self.rain_mode not in RAIN_MODES:
            raise ValueError(f"rain_mode must be one of {RAIN_MODES}")
        if self.averaging not in AVERAGING_MODES:
            raise ValueError(f"averaging must be one of {AVERAGING_MODES}")
        if self.batch_size < 1 or self.epochs < 1 or self.warmup_epochs < 0:
            raise ValueError("batch_size and epochs must be positive, warmup_epochs non-negative")
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup must be shorter than training")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie strictly between 0 and 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def overrides(self) -> dict:
        """Fields that differ from the default recipe."""
        default = TrainConfig().to_dict()
        return {k: v for k, v in self.to_dict().items() if default[k] != v}


def lr_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine annealing to 0."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError("warmup_steps must be in [0, total_steps)")
    if step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def split_dataset(samples: list, ratio: float = 0.9, seed: int = 0) -> tuple[list, list]:
    n = len(samples)
    if n < MIN_SPLIT_SIZE:
        raise ValueError(f"need at least {MIN_SPLIT_SIZE} samples to split, got {n}")
    n_train = int(math.floor(ratio * n + 0.5))
    order = np.random.default_rng(seed).permutation(n)
    return [samples[i] for i in order[:n_train]], [samples[i] for i in order[n_train:]]


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """H x W x 3 uint8 -> 3 x H x W float in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).float() / 255.0


class SegmentationDataset(Dataset):
    """In-memory samples, optionally re-rained per (seed, index, epoch)."""

    def __init__(self, samples: list[Sample], rain: bool, seed: int = 0, streak_color: float = STREAK_COLOR):
        self.samples, self.rain, self.seed, self.streak_color = samples, rain, seed, streak_color
        self.epoch = 0

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        s = self.samples[index]
        image = s.image
        if self.rain:
            image, _ = add_rain(image, sample_rng(self.seed, index, self.epoch), streak_color=self.streak_color)
        return image_to_tensor(image), torch.from_numpy(s.mask[None].astype(np.float32))


def fixed_rain(samples: list[Sample], seed: int, streak_color: float = STREAK_COLOR) -> list[Sample]:
    """A seeded, rain-overlaid copy of ``samples`` for evaluation."""
    out = []
    for i, s in enumerate(samples):
        image, _ = add_rain(s.image, sample_rng(seed, i), streak_color=streak_color)
        out.append(Sample(s.source_id, image, s.mask.copy()))
    return out


def decayed_parameter_names(model: nn.Module) -> list[str]:
    """Convolution and linear weights; biases and normalization parameters are excluded."""
    names = []
    for mod_name, mod in model.named_modules():
        if isinstance(mod, (nn.Conv2d, nn.Linear)):
            names.append(f"{mod_name}.weight" if mod_name else "weight")
    return names


def build_optimizer(model: nn.Module, cfg: TrainConfig) -> torch.optim.SGD:
    decay = set(decayed_parameter_names(model))
    groups = {True: [], False: []}
    for name, p in model.named_parameters():
        if p.requires_grad:
            groups[name in decay].append(p)
    return torch.optim.SGD(
        [{"params": groups[True], "weight_decay": cfg.weight_decay},
         {"params": groups[False], "weight_decay": 0.0}],
        lr=0.0, momentum=cfg.momentum)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_foreground_accuracy: float | None
    test_miou: float | None
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    step_lrs: list[float] = field(default_factory=list)
    best_epoch: int | None = None


class NonFiniteLossError(RuntimeError):
    def __init__(self, lr: float, epoch: int, batch_index: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch_index}, lr {lr:.6g}")
        self.snapshot = {"lr": lr, "epoch": epoch, "batch_index": batch_index, "loss": loss}


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    order = np.random.default_rng([seed, epoch]).permutation(n).tolist()
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train(model: nn.Module, train_samples: list[Sample], test_samples: list[Sample] | None,
          cfg: TrainConfig, run_dir=None) -> tuple[nn.Module, TrainHistory]:
    """SGD with momentum over BCE, lr set per step from ``lr_schedule``.

    ``test_samples`` are evaluated as given (they should already carry their
    fixed rain). With ``run_dir`` set, the config snapshot, one JSON history
    line per epoch and the best/final checkpoints are written there.
    """
    if not train_samples:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    device = torch.device(cfg.device)
    model.to(device)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(
            {"train": cfg.to_dict(), "overrides": cfg.overrides(), "network": model.cfg.to_dict()},
            indent=2, sort_keys=True))

    dataset = SegmentationDataset(train_samples, cfg.rain_mode == "online", cfg.seed, cfg.streak_color)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    warmup = cfg.warmup_epochs * steps_per_epoch
    optimizer = build_optimizer(model, cfg)
    history = TrainHistory()
    best_fa = -1.0
    step = 0
    for epoch in range(cfg.epochs):
        dataset.epoch = epoch
        loader = DataLoader(dataset, batch_sampler=_epoch_batches(len(dataset), cfg.batch_size, cfg.seed, epoch),
                            num_workers=cfg.num_workers)
        model.train()
        epoch_lr = lr_schedule(step, total, warmup, cfg.base_lr)
        losses = []
        for batch_index, (images, masks) in enumerate(loader):
            lr = lr_schedule(step, total, warmup, cfg.base_lr)
            for group in optimizer.param_groups:
                group["lr"] = lr
            images, masks = images.to(device), masks.to(device)
            loss = bce_with_logits(model(images), masks, reduction=cfg.loss_reduction)
            if not torch.isfinite(loss):
                err = NonFiniteLossError(lr, epoch, batch_index, loss.item())
                if run_dir is not None:
                    (run_dir / "nan_snapshot.json").write_text(json.dumps(err.snapshot))
                raise err
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
            history.step_losses.append(loss.item())
            history.step_lrs.append(lr)
            step += 1

        fa = mi = None
        evaluate_now = test_samples and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs)
        if evaluate_now:
            report = evaluate(model, test_samples, threshold=cfg.threshold, averaging=cfg.averaging,
                              timing=False)
            fa, mi = report.foreground_accuracy, report.miou
        record = EpochRecord(epoch, float(np.mean(losses)), fa, mi, epoch_lr)
        history.epochs.append(record)
        log.info("epoch %d loss %.5f fa %s miou %s lr %.6g", epoch, record.train_loss, fa, mi, epoch_lr)
        if run_dir is not None:
            with open(run_dir / "history.jsonl", "a") as fh:
                fh.write(json.dumps(asdict(record)) + "\n")
            if fa is not None and fa > best_fa:
                save_checkpoint(model, run_dir / "best.ckpt", {"epoch": epoch, "foreground_accuracy": fa})
        if fa is not None and fa > best_fa:
            best_fa, history.best_epoch = fa, epoch
    if run_dir is not None:
        save_checkpoint(model, run_dir / "final.ckpt", {"epoch": cfg.epochs - 1})
    return model, history


@dataclass
class ImageMetrics:
    source_id: str
    foreground_accuracy: float
    foreground_recall: float
    miou: float
    degenerate: bool


@dataclass
class EvalReport:
    per_image: list[ImageMetrics]
    foreground_accuracy: float
    foreground_recall: float
    miou: float
    mean_loss: float
    ms_per_image: float | None
    averaging: str

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def summary(self) -> dict:
        return {"foreground_accuracy": self.foreground_accuracy, "foreground_recall": self.foreground_recall,
                "miou": self.miou, "n_images": self.n_images, "ms_per_image": self.ms_per_image,
                "mean_loss": self.mean_loss, "averaging": self.averaging,
                "degenerate_images": sum(m.degenerate for m in self.per_image)}


@torch.no_grad()
def predict_probabilities(model: nn.Module, image: np.ndarray) -> np.ndarray:
    param = next(model.parameters())
    x = image_to_tensor(image)[None].to(param.device, param.dtype)
    return torch.sigmoid(model(x))[0, 0].cpu().numpy()


@torch.no_grad()
def evaluate(model: nn.Module, samples: list[Sample], threshold: float = 0.5,
             averaging: str = "per_image", timing: bool = True) -> EvalReport:
    """Segmentation metrics per image, plus their aggregate over the set."""
    if not samples:
        raise ValueError("empty test set")
    if averaging not in AVERAGING_MODES:
        raise ValueError(f"averaging must be one of {AVERAGING_MODES}")
    was_training = model.training
    model.eval()
    per_image, pooled, losses, elapsed = [], None, [], 0.0
    try:
        for s in samples:
            t0 = time.perf_counter()
            prob = predict_probabilities(model, s.image)
            elapsed += time.perf_counter() - t0
            losses.append(float(bce_loss(prob, s.mask)))
            counts = confusion(binarize(prob, threshold), s.mask)
            pooled = counts if pooled is None else pooled + counts
            per_image.append(ImageMetrics(s.source_id, foreground_accuracy(counts), foreground_recall(counts),
                                          miou(counts), is_degenerate(counts)))
    finally:
        model.train(was_training)
    if averaging == "per_image":
        fa = float(np.mean([m.foreground_accuracy for m in per_image]))
        rec = float(np.mean([m.foreground_recall for m in per_image]))
        mi = float(np.mean([m.miou for m in per_image]))
    else:
        fa, rec, mi = foreground_accuracy(pooled), foreground_recall(pooled), miou(pooled)
    ms = 1000.0 * elapsed / len(samples) if timing else None
    return EvalReport(per_image, fa, rec, mi, float(np.mean(losses)), ms, averaging)
