"""Assembly of the dual-encoder / dual-decoder network.

Both 128x128 modality slices run through separate encoders; the deepest
features are channel-concatenated and fused (MMFF). Two structurally
identical decoders produce the tumor segmentation and the recurrence
location map; each segmentation-decoder level output is additionally
concatenated into the matching prediction-decoder level (one-directional
cross-decoder skips). With the correlation module enabled, per-modality
weights map the deepest features through the learned quadratic (or linear)
relation for the correlation loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import DilatedConvGroup, Encoder, NetworkConfig, initialize_parameters
from .correlation import (
    CORRELATION_FORMS,
    CorrelationWeightEstimator,
    apply_linear_correlation,
    apply_nonlinear_correlation,
)
from .data import DataError
from .fusion import MMFF

MODES = ("pretrain", "full")


class ModelModeError(DataError):
    """Forward mode incompatible with the model's configured shape."""


@dataclass(frozen=True)
class ModelVariant:
    """Structural switches on top of NetworkConfig; part of the checkpoint
    fingerprint."""

    include_prediction: bool = True
    correlation_form: str = "nonlinear"  # nonlinear | linear | off
    use_fusion: bool = True
    inject_correlation: bool = False

    def __post_init__(self):
        if self.correlation_form not in CORRELATION_FORMS:
            raise DataError(
                f"correlation_form must be one of {CORRELATION_FORMS}, got {self.correlation_form!r}"
            )
        if self.inject_correlation and self.correlation_form == "off":
            raise DataError("inject_correlation requires an active correlation form")

    @property
    def include_correlation(self) -> bool:
        return self.correlation_form != "off"


PRETRAIN_VARIANT = ModelVariant(
    include_prediction=False, correlation_form="off", use_fusion=True
)


@dataclass
class ForwardOutput:
    seg_map: torch.Tensor  # (N, H, W) in (0, 1)
    pred_map: torch.Tensor | None = None
    f_flair: torch.Tensor | None = None
    f_t1c: torch.Tensor | None = None
    g_flair: torch.Tensor | None = None
    g_t1c: torch.Tensor | None = None
    level_outputs: list[torch.Tensor] = field(default_factory=list)


class DecoderLevel(nn.Module):
    def __init__(self, channels_in: int, channels_out: int, config: NetworkConfig, use_fusion: bool):
        super().__init__()
        self.mmff = MMFF(channels_in) if use_fusion else nn.Identity()
        self.group = DilatedConvGroup(channels_in, channels_out, config.dilation_rates)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.group(self.mmff(x))


class Decoder(nn.Module):
    """Upsample x2 (nearest), concatenate the skip (plus any cross-decoder
    feature), MMFF, dilated group; a 1x1 convolution with sigmoid yields the
    probability map."""

    def __init__(
        self,
        config: NetworkConfig,
        bottleneck_channels: int,
        extra_channels: list[int] | None = None,
        use_fusion: bool = True,
    ):
        super().__init__()
        self.config = config
        chans = config.level_channels()
        skip_chans = [2 * c for c in chans[:-1]]  # two encoders per level
        self.level_order = list(range(config.levels - 2, -1, -1))  # deep -> shallow
        self.expects_extras = extra_channels is not None
        levels = []
        current = bottleneck_channels
        for i, k in enumerate(self.level_order):
            channels_in = current + skip_chans[k]
            if extra_channels is not None:
                channels_in += extra_channels[i]
            levels.append(DecoderLevel(channels_in, chans[k], config, use_fusion))
            current = chans[k]
        self.levels = nn.ModuleList(levels)
        self.head = nn.Conv2d(chans[0], 1, kernel_size=1)

    def forward(
        self,
        bottleneck: torch.Tensor,
        skips: list[torch.Tensor],
        extras: list[torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if len(skips) != self.config.levels - 1:
            raise DataError(
                f"decoder needs {self.config.levels - 1} skip maps, got {len(skips)}"
            )
        if self.expects_extras != (extras is not None):
            raise DataError("cross-decoder features do not match decoder wiring")
        if extras is not None and len(extras) != len(self.levels):
            raise DataError(f"expected {len(self.levels)} cross-decoder maps, got {len(extras)}")
        h = bottleneck
        level_outputs = []
        for i, (k, level) in enumerate(zip(self.level_order, self.levels)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            parts = [h, skips[k]]
            if extras is not None:
                parts.append(extras[i])
            h = level(torch.cat(parts, dim=1))
            level_outputs.append(h)
        prob = torch.sigmoid(self.head(h)).squeeze(1)
        return prob, level_outputs


class RecurrenceNet(nn.Module):
    """Dual-encoder, dual-decoder network with bottleneck fusion and the
    correlation module."""

    def __init__(self, config: NetworkConfig, variant: ModelVariant = ModelVariant()):
        super().__init__()
        self.config = config
        self.variant = variant
        deepest = config.level_channels()[-1]
        fused_channels = 2 * deepest

        self.encoder_flair = Encoder(config)
        self.encoder_t1c = Encoder(config)
        self.fusion = MMFF(fused_channels) if variant.use_fusion else nn.Identity()
        if variant.include_correlation:
            self.correlation = nn.ModuleDict(
                {
                    "flair": CorrelationWeightEstimator(deepest),
                    "t1c": CorrelationWeightEstimator(deepest),
                }
            )
        else:
            self.correlation = None
        self.decoder_seg = Decoder(config, fused_channels, use_fusion=variant.use_fusion)
        if variant.include_prediction:
            seg_level_chans = [config.level_channels()[k] for k in range(config.levels - 2, -1, -1)]
            self.decoder_pred = Decoder(
                config,
                fused_channels,
                extra_channels=seg_level_chans,
                use_fusion=variant.use_fusion,
            )
        else:
            self.decoder_pred = None

    def _correlated(self, feature: torch.Tensor, modality: str) -> torch.Tensor:
        weights = self.correlation[modality](feature)
        if self.variant.correlation_form == "linear":
            return apply_linear_correlation(feature, weights)
        return apply_nonlinear_correlation(feature, weights)

    def forward(self, flair: torch.Tensor, t1c: torch.Tensor, mode: str = "full") -> ForwardOutput:
        if mode not in MODES:
            raise ModelModeError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "full" and self.decoder_pred is None:
            raise ModelModeError(
                "full forward requires a prediction decoder; this model is pretrain-shaped"
            )
        if flair.shape != t1c.shape:
            raise DataError(f"modality shapes differ: {tuple(flair.shape)} vs {tuple(t1c.shape)}")

        feats_flair = self.encoder_flair(flair)
        feats_t1c = self.encoder_t1c(t1c)
        f_flair, f_t1c = feats_flair[-1], feats_t1c[-1]
        skips = [torch.cat(pair, dim=1) for pair in zip(feats_flair[:-1], feats_t1c[:-1])]
        bottleneck = self.fusion(torch.cat([f_flair, f_t1c], dim=1))

        g_flair = g_t1c = None
        if mode == "full" and self.correlation is not None:
            g_flair = self._correlated(f_flair, "flair")
            g_t1c = self._correlated(f_t1c, "t1c")
            if self.variant.inject_correlation:
                bottleneck = bottleneck + torch.cat([g_flair, g_t1c], dim=1)

        seg_map, seg_levels = self.decoder_seg(bottleneck, skips)
        pred_map = None
        if mode == "full":
            pred_map, _ = self.decoder_pred(bottleneck, skips, extras=seg_levels)

        return ForwardOutput(
            seg_map=seg_map,
            pred_map=pred_map,
            f_flair=f_flair,
            f_t1c=f_t1c,
            g_flair=g_flair,
            g_t1c=g_t1c,
            level_outputs=seg_levels,
        )


def build_model(
    config: NetworkConfig | None = None,
    variant: ModelVariant | None = None,
    seed: int = 0,
) -> RecurrenceNet:
    """Construct a RecurrenceNet with deterministic parameter init."""
    model = RecurrenceNet(config or NetworkConfig(), variant or ModelVariant())
    initialize_parameters(model, seed)
    return model


def expected_encoder_shapes(config: NetworkConfig, batch: int = 1) -> list[tuple[int, int, int, int]]:
    """Closed-form per-level encoder output shapes for a given config."""
    return [
        (batch, c, s, s)
        for c, s in zip(config.level_channels(), config.level_sizes())
    ]
