"""Cross-modality correlation learning.

Per-channel weights (alpha, beta, gamma) are estimated from the deepest
feature map of one modality (global average pool -> two fully connected
layers) and define an elementwise mapping G = alpha*F^2 + beta*F + gamma
(or its linear ablation G = alpha*F + gamma). Features are converted to
probability distributions with a softmax over all entries and compared
with a choice of divergence.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import DataError, ShapeMismatchError

#: floor applied before logs and square roots
PROB_FLOOR = 1e-12

DIVERGENCES = ("kl", "jeffreys", "hellinger2")
CORRELATION_FORMS = ("nonlinear", "linear", "off")


class CorrelationWeights(NamedTuple):
    alpha: torch.Tensor  # (..., C)
    beta: torch.Tensor
    gamma: torch.Tensor


class CorrelationWeightEstimator(nn.Module):
    """GAP over space, then two fully connected layers (hidden width C)
    producing 3C outputs split into per-channel (alpha, beta, gamma)."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.fc1 = nn.Linear(channels, channels)
        self.fc2 = nn.Linear(channels, 3 * channels)

    def forward(self, feature: torch.Tensor) -> CorrelationWeights:
        if feature.ndim != 4 or feature.shape[1] != self.channels:
            raise ShapeMismatchError(
                f"estimator expects (N, {self.channels}, H, W), got {tuple(feature.shape)}"
            )
        pooled = feature.mean(dim=(-2, -1))
        hidden = F.silu(self.fc1(pooled))
        out = self.fc2(hidden)
        alpha, beta, gamma = out.chunk(3, dim=-1)
        return CorrelationWeights(alpha=alpha, beta=beta, gamma=gamma)


def _broadcast(w: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
    if w.shape[-1] != feature.shape[-3]:
        raise ShapeMismatchError(
            f"weight channels {w.shape[-1]} do not match feature channels {feature.shape[-3]}"
        )
    return w[..., None, None]


def apply_nonlinear_correlation(feature: torch.Tensor, w: CorrelationWeights) -> torch.Tensor:
    a = _broadcast(w.alpha, feature)
    b = _broadcast(w.beta, feature)
    g = _broadcast(w.gamma, feature)
    return a * feature.square() + b * feature + g


def apply_linear_correlation(feature: torch.Tensor, w: CorrelationWeights) -> torch.Tensor:
    a = _broadcast(w.alpha, feature)
    g = _broadcast(w.gamma, feature)
    return a * feature + g


def feature_to_distribution(feature: torch.Tensor) -> torch.Tensor:
    """Softmax over all C*H*W entries of each feature map; strictly positive
    and shift-invariant by construction."""
    if feature.ndim < 3:
        raise DataError(f"expected (..., C, H, W) feature, got shape {tuple(feature.shape)}")
    flat = feature.reshape(*feature.shape[:-3], -1)
    return torch.softmax(flat, dim=-1)


def _check_pair(p: torch.Tensor, q: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    if p.shape[-1] != q.shape[-1]:
        raise ShapeMismatchError(
            f"distribution lengths differ: {p.shape[-1]} vs {q.shape[-1]}"
        )
    return p.clamp_min(PROB_FLOOR), q.clamp_min(PROB_FLOOR)


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    p, q = _check_pair(p, q)
    return (p * (p.log() - q.log())).sum(dim=-1)


def jeffreys_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    p, q = _check_pair(p, q)
    return ((p - q) * (p.log() - q.log())).sum(dim=-1)


def squared_hellinger(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    p, q = _check_pair(p, q)
    return (2.0 * (p.sqrt() - q.sqrt()).square()).sum(dim=-1)


_DIVERGENCE_FNS = {
    "kl": kl_divergence,
    "jeffreys": jeffreys_divergence,
    "hellinger2": squared_hellinger,
}


def get_divergence(name: str):
    try:
        return _DIVERGENCE_FNS[name]
    except KeyError:
        raise DataError(f"unknown divergence {name!r}; choose from {DIVERGENCES}") from None


def correlation_loss(
    f_flair: torch.Tensor,
    f_t1c: torch.Tensor,
    g_flair: torch.Tensor,
    g_t1c: torch.Tensor,
    divergence: str = "kl",
) -> torch.Tensor:
    """Symmetric two-directional loss: div(P(F_t1c) || Q(G_flair)) +
    div(P(F_flair) || Q(G_t1c)), averaged over the batch."""
    div = get_divergence(divergence)
    shapes = {tuple(t.shape) for t in (f_flair, f_t1c, g_flair, g_t1c)}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"correlation features disagree in shape: {sorted(shapes)}")
    loss = div(feature_to_distribution(f_t1c), feature_to_distribution(g_flair))
    loss = loss + div(feature_to_distribution(f_flair), feature_to_distribution(g_t1c))
    return loss.mean()
