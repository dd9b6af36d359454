"""Multi-scale multi-channel feature fusion.

Two attention branches over one feature map: three spatial attention maps
from parallel 1x1/3x3/5x5 single-output convolutions, and per-channel
weights from sigmoid(global average pool + global max pool). The branch
outputs are added.
"""

from __future__ import annotations

import torch
import torch.nn as nn

SPATIAL_KERNELS = (1, 3, 5)


class MultiScaleSpatialAttention(nn.Module):
    """Averages the input reweighted by three sigmoid attention maps with
    different receptive fields; division by 3 keeps the output on the
    input's scale."""

    def __init__(self, channels: int):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, 1, k, padding=k // 2) for k in SPATIAL_KERNELS
        )

    def attention_maps(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [torch.sigmoid(conv(x)) for conv in self.convs]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        maps = self.attention_maps(x)
        out = maps[0] * x
        for m in maps[1:]:
            out = out + m * x
        return out / len(maps)


class MultiChannelAttention(nn.Module):
    """Parameter-free channel gate: sigmoid(GAP + GMP) per channel."""

    def channel_weights(self, x: torch.Tensor) -> torch.Tensor:
        gap = x.mean(dim=(-2, -1))
        gmp = x.amax(dim=(-2, -1))
        return torch.sigmoid(gap + gmp)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        w = self.channel_weights(x)
        return w[..., None, None] * x


class MMFF(nn.Module):
    """Sum of the spatially and channel-wise recalibrated features."""

    def __init__(self, channels: int):
        super().__init__()
        self.spatial = MultiScaleSpatialAttention(channels)
        self.channel = MultiChannelAttention()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.spatial(x) + self.channel(x)
