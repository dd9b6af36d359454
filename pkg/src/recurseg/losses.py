"""Training objectives: soft Dice, the combined segmentation loss, and the
joint total."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import DataError, ShapeMismatchError


@dataclass(frozen=True)
class LossConfig:
    epsilon: float = 1e-5
    phi: float = 0.1  # trade-off weight on the correlation loss
    prediction_weight: float = 1.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DataError("epsilon must be > 0")
        if self.phi < 0 or self.prediction_weight < 0:
            raise DataError("loss weights must be >= 0")


def dice_loss(p: torch.Tensor, g: torch.Tensor, epsilon: float = 1e-5) -> torch.Tensor:
    """Soft Dice loss 1 - (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps), computed
    per map and averaged over any leading batch dimension."""
    if p.shape != g.shape:
        raise ShapeMismatchError(f"prediction/target shapes differ: {tuple(p.shape)} vs {tuple(g.shape)}")
    if p.ndim < 2:
        raise DataError(f"expected at least (H, W), got shape {tuple(p.shape)}")
    g = g.to(p.dtype)
    flat_p = p.reshape(*p.shape[:-2], -1)
    flat_g = g.reshape(*g.shape[:-2], -1)
    inter = (flat_p * flat_g).sum(dim=-1)
    denom = flat_p.sum(dim=-1) + flat_g.sum(dim=-1)
    loss = 1.0 - (2.0 * inter + epsilon) / (denom + epsilon)
    return loss.mean()


def segmentation_loss(dice: torch.Tensor, cor: torch.Tensor | float, phi: float) -> torch.Tensor:
    return dice + phi * cor


def total_loss(
    seg_loss: torch.Tensor,
    pred_dice: torch.Tensor | None,
    config: LossConfig,
) -> torch.Tensor:
    """Joint objective; in pretrain mode (no prediction branch) this is just
    the segmentation loss."""
    if pred_dice is None:
        return seg_loss
    return seg_loss + config.prediction_weight * pred_dice
