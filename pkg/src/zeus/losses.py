"""Training objective (Dice + BCE on soft probabilities) and the overlap
metrics (DSC, mIoU) computed on thresholded binary masks.

Losses run on Tensors and are differentiable; metrics run on plain arrays
with exact integer pixel counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor

BCE_CLAMP = 1e-7


@dataclass
class LossConfig:
    dice_smooth: float = 1.0
    bce_weight: float = 1.0
    dice_weight: float = 1.0
    threshold: float = 0.5

    def __post_init__(self):
        if self.dice_smooth <= 0:
            raise ConfigError("dice_smooth must be positive")
        if self.bce_weight < 0 or self.dice_weight < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.bce_weight == 0 and self.dice_weight == 0:
            raise ConfigError("at least one loss weight must be positive")


def _check_shapes(a, b, op: str):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def dice_loss(probs: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """1 - (2 sum(p t) + eps) / (sum p + sum t + eps), averaged over leading dims.

    probs may be (S, S) or batched (..., S, S); the Dice ratio is computed
    per image over the last two axes, then averaged.
    """
    target = Tensor._lift(target)
    _check_shapes(probs, target, "dice_loss")
    axes = (-2, -1)
    inter = (probs * target).sum(axis=axes)
    denom = probs.sum(axis=axes) + target.sum(axis=axes)
    dice = (inter * 2.0 + smooth) / (denom + smooth)
    return (1.0 - dice).mean()


def bce_loss(probs: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped away from {0, 1}."""
    target = Tensor._lift(target)
    _check_shapes(probs, target, "bce_loss")
    p = probs.clip(BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = -(target * p.log() + (1.0 - target) * (1.0 - p).log())
    return losses.mean()


def combined_loss(probs: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    return (dice_loss(probs, target, cfg.dice_smooth) * cfg.dice_weight
            + bce_loss(probs, target) * cfg.bce_weight)


def _as_binary(mask) -> np.ndarray:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return arr.astype(bool)


def dsc_metric(pred, target) -> float:
    """2|P n T| / (|P| + |T|); both-empty counts as perfect overlap."""
    p = _as_binary(pred)
    t = _as_binary(target)
    _check_shapes(p, t, "dsc_metric")
    inter = int(np.logical_and(p, t).sum())
    total = int(p.sum()) + int(t.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def miou_metric(pred, target) -> float:
    """Mean of foreground and background IoU; an empty class scores 1."""
    p = _as_binary(pred)
    t = _as_binary(target)
    _check_shapes(p, t, "miou_metric")

    def class_iou(pc: np.ndarray, tc: np.ndarray) -> float:
        union = int(np.logical_or(pc, tc).sum())
        if union == 0:
            return 1.0
        return int(np.logical_and(pc, tc).sum()) / union

    return 0.5 * (class_iou(p, t) + class_iou(~p, ~t))
