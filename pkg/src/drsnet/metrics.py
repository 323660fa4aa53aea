"""Loss and segmentation metrics for binary foreground masks.

Functions accept numpy arrays or torch tensors. ``bce_loss`` keeps torch
inputs on the autograd graph; the counting metrics always return Python
numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

EPS = 1e-7


def _check_shapes(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _check_binary(y, what: str) -> None:
    if isinstance(y, torch.Tensor):
        ok = bool(((y == 0) | (y == 1)).all())
    else:
        y = np.asarray(y)
        ok = bool(np.isin(y, (0, 1)).all())
    if not ok:
        raise ValueError(f"{what} must contain only 0 and 1")


def _reduce(values, reduction: str):
    if reduction == "mean":
        return values.mean()
    if reduction == "sum":
        return values.sum()
    if reduction == "none":
        return values
    raise ValueError(f"reduction must be 'mean', 'sum' or 'none', got {reduction!r}")


def bce_loss(pred, target, reduction: str = "mean", eps: float = EPS):
    """Binary cross-entropy over per-pixel probabilities ``pred``.

    ``pred`` is clamped to [eps, 1 - eps] before taking logs. ``reduction``
    selects the plain sum, the per-pixel mean (default) or no reduction.
    """
    _check_shapes(pred, target, "bce_loss")
    _check_binary(target, "bce_loss target")
    if isinstance(pred, torch.Tensor):
        target = torch.as_tensor(target, dtype=pred.dtype, device=pred.device)
        p = pred.clamp(eps, 1 - eps)
        values = -(target * torch.log(p) + (1 - target) * torch.log1p(-p))
    else:
        p = np.clip(np.asarray(pred, dtype=np.float64), eps, 1 - eps)
        y = np.asarray(target, dtype=np.float64)
        values = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return _reduce(values, reduction)


def bce_with_logits(logits: torch.Tensor, target: torch.Tensor, reduction: str = "mean"):
    """Same quantity as ``bce_loss(sigmoid(logits), target)``, computed stably."""
    _check_shapes(logits, target, "bce_with_logits")
    return F.binary_cross_entropy_with_logits(logits, target.to(logits.dtype), reduction=reduction)


def binarize(prob, threshold: float = 0.5):
    """Foreground where ``prob >= threshold``."""
    if isinstance(prob, torch.Tensor):
        return (prob >= threshold).to(torch.uint8)
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def _as_bool(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x).astype(bool)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    def matrix(self) -> np.ndarray:
        """2x2 matrix P with P[i, j] = pixels of true class i predicted as j."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.int64)


def confusion(pred, target) -> ConfusionCounts:
    _check_shapes(pred, target, "confusion")
    _check_binary(pred, "confusion pred")
    _check_binary(target, "confusion target")
    p, t = _as_bool(pred), _as_bool(target)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def confusion_matrix(pred, target, num_classes: int = 2) -> np.ndarray:
    """(k+1) x (k+1) count matrix for integer label maps."""
    _check_shapes(pred, target, "confusion_matrix")
    p = np.asarray(pred.detach().cpu() if isinstance(pred, torch.Tensor) else pred).astype(np.int64).ravel()
    t = np.asarray(target.detach().cpu() if isinstance(target, torch.Tensor) else target).astype(np.int64).ravel()
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.bincount(t * num_classes + p, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def is_degenerate(counts: ConfusionCounts) -> bool:
    """True when nothing was predicted as foreground, so precision is undefined."""
    return counts.tp + counts.fp == 0


def foreground_accuracy(counts: ConfusionCounts) -> float:
    """TP / (TP + FP); 0.0 when no pixel was predicted foreground."""
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else 0.0


def foreground_recall(counts: ConfusionCounts) -> float:
    """TP / (TP + FN); 0.0 when the target has no foreground."""
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else 0.0


def class_iou(matrix) -> np.ndarray:
    """Per-class IoU, NaN for classes absent from both prediction and target."""
    m = matrix.matrix() if isinstance(matrix, ConfusionCounts) else np.asarray(matrix)
    diag = np.diag(m).astype(np.float64)
    denom = m.sum(axis=1) + m.sum(axis=0) - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, diag / np.maximum(denom, 1), np.nan)


def miou(matrix) -> float:
    """Mean IoU over classes; classes with an empty union are left out of the mean."""
    ious = class_iou(matrix)
    valid = ~np.isnan(ious)
    return float(ious[valid].mean()) if valid.any() else 0.0
