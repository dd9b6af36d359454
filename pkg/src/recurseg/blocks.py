"""Differentiable building blocks: dilated convolution groups, strided
downsampling, and the per-modality encoder.

Every convolution is followed by instance normalization (affine, gain 1 /
shift 0 at init) and a SiLU nonlinearity, so an all-zero input with
zero-initialized biases stays exactly zero through the whole stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import DataError


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 4
    base_channels: int = 16
    dilation_rates: tuple[int, ...] = (1, 2, 4)
    input_size: int = 128
    modality_count: int = 2
    decoder_count: int = 2

    def __post_init__(self):
        if self.levels < 2:
            raise DataError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise DataError("base_channels must be positive")
        if self.input_size % 2 ** (self.levels - 1) != 0:
            raise DataError(
                f"input_size {self.input_size} not divisible by 2^{self.levels - 1}"
            )
        if not self.dilation_rates or any(r < 1 for r in self.dilation_rates):
            raise DataError(f"bad dilation rates {self.dilation_rates}")
        if self.modality_count != 2 or self.decoder_count != 2:
            raise DataError("this implementation is fixed to 2 modalities and 2 decoders")

    def level_channels(self) -> list[int]:
        return [self.base_channels * 2**level for level in range(self.levels)]

    def level_sizes(self) -> list[int]:
        return [self.input_size // 2**level for level in range(self.levels)]


class DilatedConvGroup(nn.Module):
    """Parallel 3x3 convolutions at the configured dilation rates, summed,
    then instance norm and SiLU."""

    def __init__(self, in_channels: int, out_channels: int, rates: tuple[int, ...] = (1, 2, 4)):
        super().__init__()
        self.rates = tuple(rates)
        self.branches = nn.ModuleList(
            nn.Conv2d(in_channels, out_channels, 3, padding=r, dilation=r) for r in self.rates
        )
        self.norm = nn.InstanceNorm2d(out_channels, affine=True)

    @property
    def receptive_field(self) -> int:
        # effective extent of the widest branch (kernel 3)
        return max(self.rates) * 2 + 1

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.branches[0](x)
        for branch in self.branches[1:]:
            out = out + branch(x)
        return F.silu(self.norm(out))


class Downsample(nn.Module):
    """Stride-2 3x3 convolution (replaces pooling), channel-doubling."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(out_channels, affine=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.silu(self.norm(self.conv(x)))


class EncoderLevel(nn.Module):
    def __init__(self, group: DilatedConvGroup, down: Downsample | None):
        super().__init__()
        self.group = group
        self.down = down


class Encoder(nn.Module):
    """Single-modality encoder; returns one feature map per level, spatial
    size halving and channel count doubling with depth."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        chans = config.level_channels()
        levels = []
        for level in range(config.levels):
            in_ch = 1 if level == 0 else chans[level]
            group = DilatedConvGroup(in_ch, chans[level], config.dilation_rates)
            down = None
            if level < config.levels - 1:
                down = Downsample(chans[level], chans[level + 1])
            levels.append(EncoderLevel(group, down))
        self.levels = nn.ModuleList(levels)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 1:
            raise DataError(f"encoder expects (N, 1, H, W) input, got {tuple(x.shape)}")
        if x.shape[-2] != self.config.input_size or x.shape[-1] != self.config.input_size:
            raise DataError(
                f"encoder configured for {self.config.input_size}^2 inputs, got {tuple(x.shape[-2:])}"
            )
        features = []
        h = x
        for level in self.levels:
            h = level.group(h)
            features.append(h)
            if level.down is not None:
                h = level.down(h)
        return features


def initialize_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic init: fan-in-scaled normal kernels, zero biases,
    instance norms at gain 1 / shift 0."""
    gen = torch.Generator().manual_seed(seed)
    seen: set[int] = set()
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
                else:
                    fan_in = m.in_features
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                seen.add(id(m.weight))
                if m.bias is not None:
                    m.bias.zero_()
                    seen.add(id(m.bias))
            elif isinstance(m, nn.InstanceNorm2d):
                if m.weight is not None:
                    m.weight.fill_(1.0)
                    seen.add(id(m.weight))
                if m.bias is not None:
                    m.bias.zero_()
                    seen.add(id(m.bias))
    missed = [name for name, p in module.named_parameters() if id(p) not in seen]
    if missed:
        raise RuntimeError(f"initializer does not cover parameters: {missed}")
