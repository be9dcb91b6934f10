"""
Dice + cross-entropy segmentation loss.
"""

from typing import Tuple

import numpy as np

from oarseg.tensor.tensor import Tensor
from oarseg.utils.errors import DimensionError, ValidationError

DICE_SMOOTH = 1e-5
LOG_FLOOR = 1e-12


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """[N,H,W] integer labels -> [N,C,H,W] indicator array.

    Raises:
        ValidationError: If a label is outside [0, num_classes)
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValidationError(
            f"Labels must lie in [0, {num_classes}), got [{labels.min()}, {labels.max()}]", "VAL_005"
        )
    return np.moveaxis(np.eye(num_classes)[labels], -1, 1)


def dice_ce_terms(probs: Tensor, target: np.ndarray) -> Tuple[Tensor, Tensor]:
    """(cross-entropy, 1 - mean foreground soft Dice) for probabilities [N,C,H,W].

    Soft Dice is aggregated over the whole batch per class.
    """
    if probs.ndim != 4:
        raise DimensionError("dice_ce_loss", "[N,C,H,W]", probs.shape)
    target = np.asarray(target)
    if target.shape != (probs.shape[0],) + probs.shape[2:]:
        raise DimensionError("dice_ce_loss", (probs.shape[0],) + probs.shape[2:], target.shape)
    num_classes = probs.shape[1]
    onehot = one_hot(target, num_classes)

    p_target = (probs * onehot).sum(axis=1)
    ce = -p_target.log(LOG_FLOOR).mean()

    axes = (0, 2, 3)
    intersection = (probs * onehot).sum(axis=axes)
    denominator = probs.sum(axis=axes) + onehot.sum(axis=axes)
    dice = (intersection * 2.0 + DICE_SMOOTH) / (denominator + DICE_SMOOTH)
    dice_loss = 1.0 - dice[1:].mean()
    return ce, dice_loss


def dice_ce_loss(probs: Tensor, target: np.ndarray, weights: Tuple[float, float] = (1.0, 1.0)) -> Tensor:
    """w_ce * CE + w_dice * (1 - soft Dice).

    Args:
        probs: Per-pixel class probabilities [N,C,H,W]
        target: Integer labels [N,H,W] in [0, C)
        weights: (w_dice, w_ce)

    Returns:
        Scalar loss tensor
    """
    w_dice, w_ce = weights
    ce, dice_loss = dice_ce_terms(probs, target)
    return ce * w_ce + dice_loss * w_dice


def soft_dice_score(probs: np.ndarray, target: np.ndarray) -> float:
    """Mean foreground soft Dice of a numpy probability batch (no graph)."""
    onehot = one_hot(target, probs.shape[1])
    axes = (0, 2, 3)
    intersection = (probs * onehot).sum(axis=axes)
    denominator = probs.sum(axis=axes) + onehot.sum(axis=axes)
    dice = (2.0 * intersection + DICE_SMOOTH) / (denominator + DICE_SMOOTH)
    return float(dice[1:].mean())
