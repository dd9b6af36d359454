"""Deterministic synthetic two-modality, two-time-point benchmark cases.

Each case carries an elliptical tumor, a cross-modality intensity relation
planted inside it (t1c = a*flair^2 + b*flair + c), and a recurrence ellipse
anchored just beyond the tumor boundary. A faint FLAIR elevation marks the
recurrence site at time 1 so the prediction task is learnable from inputs
rather than by memorization alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Case, DataError


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    tumor_radius_range: tuple[float, float] = (8.0, 20.0)
    recurrence_offset_range: tuple[float, float] = (4.0, 12.0)
    noise_std: float = 0.05
    # planted relation inside the tumor: t1c = a*flair^2 + b*flair + c
    correlation_coeffs: tuple[float, float, float] = (0.5, 0.3, 0.1)
    recurrence_cue: float = 0.2
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.tumor_radius_range
        if not (0 < lo <= hi < self.image_size / 2):
            raise DataError(f"tumor radii must lie in (0, image_size/2): {self.tumor_radius_range}")
        olo, ohi = self.recurrence_offset_range
        if not (0 < olo <= ohi):
            raise DataError(f"bad recurrence offset range {self.recurrence_offset_range}")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.image_size < 32:
            raise DataError("image_size must be >= 32")


def _elliptical_rho(size: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    """Normalized elliptical radius field (0 at center, 1 on the boundary)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy = yy - cy
    dx = xx - cx
    ct, st = math.cos(theta), math.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return np.sqrt((u / a) ** 2 + (v / b) ** 2)


def _ellipse_radius_along(a: float, b: float, theta: float, direction: float) -> float:
    """Distance from center to the ellipse boundary along a world direction."""
    psi = direction - theta
    return (a * b) / math.hypot(b * math.cos(psi), a * math.sin(psi))


def _smooth_background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency field in roughly [0.05, 0.3]: tilted plane + two bumps."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    gy, gx = rng.uniform(-0.08, 0.08, size=2)
    field = 0.15 + gy * (yy - 0.5) + gx * (xx - 0.5)
    for _ in range(2):
        by, bx = rng.uniform(0.2, 0.8, size=2)
        amp = rng.uniform(-0.06, 0.06)
        width = rng.uniform(0.15, 0.4)
        field += amp * np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2 * width**2)))
    return field


def generate_case(config: SynthConfig, index: int) -> Case:
    """Deterministic per (config.seed, index)."""
    if index < 0:
        raise DataError("case index must be >= 0")
    rng = np.random.default_rng([config.seed, index])
    size = config.image_size

    # geometry draws happen in one fixed order so cases are reproducible
    r_lo, r_hi = config.tumor_radius_range
    a_t = rng.uniform(r_lo, r_hi)
    b_t = rng.uniform(r_lo, min(a_t, r_hi))
    theta_t = rng.uniform(0, math.pi)
    offset = rng.uniform(*config.recurrence_offset_range)
    direction = rng.uniform(0, 2 * math.pi)
    # recurrence radius toward the tumor is kept within offset - 3.5 so the
    # lesion always meets the 5 px dilation of the tumor boundary
    a_r_lo = max(3.5, offset - 3.5)
    a_r = rng.uniform(a_r_lo, a_r_lo + 3.0)
    b_r = rng.uniform(3.0, min(a_r, 8.0))

    reach = _ellipse_radius_along(a_t, b_t, theta_t, direction) + offset + a_r
    margin = max(a_t, b_t, reach) + 3.0
    if 2 * margin >= size - 1:
        raise DataError(
            f"image_size {size} too small for tumor/recurrence geometry (margin {margin:.1f})"
        )
    cy_t = rng.uniform(margin, size - 1 - margin)
    cx_t = rng.uniform(margin, size - 1 - margin)

    boundary_dist = _ellipse_radius_along(a_t, b_t, theta_t, direction) + offset
    cy_r = cy_t + boundary_dist * math.sin(direction)
    cx_r = cx_t + boundary_dist * math.cos(direction)

    rho_t = _elliptical_rho(size, cy_t, cx_t, a_t, b_t, theta_t)
    rho_r = _elliptical_rho(size, cy_r, cx_r, a_r, b_r, direction)
    tumor = rho_t <= 1.0
    recurrence = rho_r <= 1.0

    flair = _smooth_background(rng, size)
    flair[tumor] = 0.55 + 0.40 * (1.0 - rho_t[tumor] ** 2)
    # time-1 cue at the recurrence site: flat plateau with a thin rolloff
    cue_profile = np.clip(3.0 * (1.0 - rho_r), 0.0, 1.0)
    flair = flair + config.recurrence_cue * cue_profile * recurrence

    a, b, c = config.correlation_coeffs
    t1c = _smooth_background(rng, size)
    ft = flair[tumor]
    t1c[tumor] = a * ft**2 + b * ft + c

    noise_flair = rng.normal(0.0, 1.0, size=(size, size))
    noise_t1c = rng.normal(0.0, 1.0, size=(size, size))
    flair = flair + config.noise_std * noise_flair
    t1c = t1c + config.noise_std * noise_t1c

    return Case(
        id=f"synth-{index:04d}",
        flair_t1=flair.astype(np.float32),
        t1c_t1=t1c.astype(np.float32),
        tumor_mask_t1=tumor.astype(np.uint8),
        recurrence_mask_t2=recurrence.astype(np.uint8),
    )


def generate_dataset(config: SynthConfig, n: int) -> list[Case]:
    if n < 1:
        raise DataError(f"dataset size must be >= 1, got {n}")
    return [generate_case(config, i) for i in range(n)]
