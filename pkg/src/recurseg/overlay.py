"""Static overlay images: grayscale FLAIR background with predicted and
ground-truth contours plus DSC annotations, one PNG per case."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from . import metrics
from .data import Case

SEG_COLOR = (255, 0, 0)
PRED_COLOR = (0, 160, 255)
GT_TUMOR_COLOR = (0, 255, 0)
GT_REC_COLOR = (255, 255, 0)
TEXT_COLOR = (255, 255, 255)


def _to_grayscale(slice_: np.ndarray) -> np.ndarray:
    lo, hi = float(slice_.min()), float(slice_.max())
    if hi <= lo:
        return np.zeros(slice_.shape, dtype=np.uint8)
    return (255.0 * (slice_.astype(np.float64) - lo) / (hi - lo)).astype(np.uint8)


def contour_pixels(mask: np.ndarray, dashed: bool = False) -> np.ndarray:
    """Contour coordinates of a mask; dashed keeps every other pixel in a
    checker pattern. Empty masks give an empty coordinate list."""
    if not np.asarray(mask).any():
        return np.zeros((0, 2), dtype=np.int64)
    points = metrics.surface_points(mask)
    if dashed:
        keep = (points[:, 0] + points[:, 1]) % 2 == 0
        points = points[keep]
    return points


def render_overlay(
    case: Case,
    seg_map: np.ndarray,
    pred_map: np.ndarray | None,
    out_path,
    dsc_seg: float | None = None,
    dsc_pred: float | None = None,
) -> Path:
    """Compose FLAIR background + contours; ground truth is dashed, model
    outputs are solid (segmentation drawn last, on top)."""
    base = _to_grayscale(case.flair_t1)
    rgb = np.stack([base, base, base], axis=-1)

    layers = [
        (contour_pixels(case.tumor_mask_t1, dashed=True), GT_TUMOR_COLOR),
        (contour_pixels(case.recurrence_mask_t2, dashed=True), GT_REC_COLOR),
    ]
    if pred_map is not None:
        layers.append((contour_pixels(metrics.binarize(pred_map)), PRED_COLOR))
    layers.append((contour_pixels(metrics.binarize(seg_map)), SEG_COLOR))
    for points, color in layers:
        rgb[points[:, 0], points[:, 1]] = color

    image = Image.fromarray(rgb, mode="RGB")
    draw = ImageDraw.Draw(image)
    annotations = []
    if dsc_seg is not None:
        annotations.append(f"seg {dsc_seg:.2f}")
    if dsc_pred is not None:
        annotations.append(f"pred {dsc_pred:.2f}")
    if annotations:
        draw.text((2, 1), " | ".join(annotations), fill=TEXT_COLOR)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    image.save(out_path, format="PNG")
    return out_path
