"""Evaluation metrics: DSC, exact Hausdorff distance, Sensitivity.

All metrics operate on binary masks at the working resolution; Hausdorff
distances are therefore reported in pixel units (the column is labeled
``hd_px``), not millimetres.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DataError, ShapeMismatchError, as_mask

TASKS = ("segmentation", "prediction")


class EmptyMaskError(DataError):
    """Surface/Hausdorff computations need a nonempty mask."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map; values >= threshold become 1."""
    arr = np.asarray(prob, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1):
        raise DataError("probability map must lie in [0, 1]")
    return (arr >= threshold).astype(np.uint8)


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    p = as_mask(pred).astype(bool)
    g = as_mask(gt).astype(bool)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"mask shapes differ: {p.shape} vs {g.shape}")
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    tn = int(np.sum(~p & ~g))
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def both_empty(counts: ConfusionCounts) -> bool:
    return counts.tp == 0 and counts.fp == 0 and counts.fn == 0


def dsc(counts: ConfusionCounts) -> float:
    """2TP / (2TP + FP + FN); the degenerate both-empty case is defined as
    perfect agreement (1.0) and flagged by the caller via both_empty()."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0
    return 2 * counts.tp / denom


def sensitivity(counts: ConfusionCounts) -> float | None:
    """TP / (TP + FN); None when the ground truth is empty."""
    denom = counts.tp + counts.fn
    if denom == 0:
        return None
    return counts.tp / denom


def surface_points(mask: np.ndarray) -> np.ndarray:
    """Boundary pixels of a mask (4-connectivity interior erosion), as an
    (K, 2) array of (row, col) coordinates in lexicographic order."""
    m = as_mask(mask).astype(bool)
    if not m.any():
        raise EmptyMaskError("surface of an empty mask is undefined")
    padded = np.pad(m, 1, mode="constant")
    interior = (
        padded[1:-1, 1:-1]
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    boundary = m & ~interior
    return np.argwhere(boundary)


def hausdorff(pred: np.ndarray, gt: np.ndarray) -> float:
    """Exact symmetric Hausdorff distance between mask surfaces, in pixels."""
    s = surface_points(pred).astype(np.float64)
    r = surface_points(gt).astype(np.float64)
    d2 = ((s[:, None, :] - r[None, :, :]) ** 2).sum(axis=2)
    forward = np.sqrt(d2.min(axis=1)).max()
    backward = np.sqrt(d2.min(axis=0)).max()
    return float(max(forward, backward))


@dataclass(frozen=True)
class CaseMetrics:
    case_id: str
    dsc: float
    both_empty: bool
    sensitivity: float | None
    hausdorff: float | None


def case_metrics(case_id: str, pred: np.ndarray, gt: np.ndarray) -> CaseMetrics:
    counts = confusion_counts(pred, gt)
    try:
        hd = hausdorff(pred, gt)
    except EmptyMaskError:
        hd = None
    return CaseMetrics(
        case_id=case_id,
        dsc=dsc(counts),
        both_empty=both_empty(counts),
        sensitivity=sensitivity(counts),
        hausdorff=hd,
    )


@dataclass(frozen=True)
class TaskAggregate:
    task: str
    applicable: bool
    n_cases: int
    dsc_pct: float | None
    hd_px: float | None
    sensitivity_pct: float | None
    hd_excluded: int
    sensitivity_excluded: int
    dsc_both_empty: int


def _aggregate(task: str, rows: Sequence[CaseMetrics] | None) -> TaskAggregate:
    if rows is None:
        return TaskAggregate(task, False, 0, None, None, None, 0, 0, 0)
    if not rows:
        raise DataError("cannot aggregate zero cases")
    hds = [r.hausdorff for r in rows if r.hausdorff is not None]
    sens = [r.sensitivity for r in rows if r.sensitivity is not None]
    return TaskAggregate(
        task=task,
        applicable=True,
        n_cases=len(rows),
        dsc_pct=100.0 * float(np.mean([r.dsc for r in rows])),
        hd_px=float(np.mean(hds)) if hds else None,
        sensitivity_pct=100.0 * float(np.mean(sens)) if sens else None,
        hd_excluded=len(rows) - len(hds),
        sensitivity_excluded=len(rows) - len(sens),
        dsc_both_empty=sum(1 for r in rows if r.both_empty),
    )


@dataclass(frozen=True)
class MetricReport:
    """Per-case metrics for both tasks plus Table-style aggregates."""

    segmentation: tuple[CaseMetrics, ...]
    prediction: tuple[CaseMetrics, ...] | None  # None: task not applicable

    def aggregate(self, task: str) -> TaskAggregate:
        if task == "segmentation":
            return _aggregate(task, self.segmentation)
        if task == "prediction":
            return _aggregate(task, self.prediction)
        raise DataError(f"unknown task {task!r}")

    def to_tsv(self, path) -> None:
        cols = ["task", "dsc_pct", "hd_px", "sensitivity_pct"]
        lines = ["\t".join(cols)]
        for task in TASKS:
            agg = self.aggregate(task)
            row = [task] + [
                _fmt(v) for v in (agg.dsc_pct, agg.hd_px, agg.sensitivity_pct)
            ]
            lines.append("\t".join(row))
        Path(path).write_text("\n".join(lines) + "\n")

    def to_jsonl(self, path) -> None:
        records = []
        for task, rows in (("segmentation", self.segmentation), ("prediction", self.prediction)):
            if rows is None:
                records.append({"task": task, "applicable": False})
                continue
            for r in rows:
                rec = {"task": task, "applicable": True}
                rec.update(asdict(r))
                records.append(rec)
        Path(path).write_text("\n".join(json.dumps(r) for r in records) + "\n")

    def write(self, outdir, stem: str = "report") -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        tsv = outdir / f"{stem}.tsv"
        jsonl = outdir / f"{stem}_cases.jsonl"
        self.to_tsv(tsv)
        self.to_jsonl(jsonl)
        return tsv, jsonl

    @classmethod
    def from_jsonl(cls, path) -> "MetricReport":
        rows: dict[str, list[CaseMetrics] | None] = {"segmentation": [], "prediction": []}
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            task = rec["task"]
            if task not in rows:
                raise DataError(f"unknown task {task!r} in {path}")
            if not rec.get("applicable", True):
                rows[task] = None
                continue
            rows[task].append(
                CaseMetrics(
                    case_id=rec["case_id"],
                    dsc=rec["dsc"],
                    both_empty=rec["both_empty"],
                    sensitivity=rec["sensitivity"],
                    hausdorff=rec["hausdorff"],
                )
            )
        seg = rows["segmentation"]
        if seg is None:
            raise DataError("segmentation task missing from report")
        pred = rows["prediction"]
        return cls(segmentation=tuple(seg), prediction=tuple(pred) if pred is not None else None)


def _fmt(value: float | None) -> str:
    return "NA" if value is None else repr(float(value))


def aggregate_report(
    segmentation: Sequence[CaseMetrics],
    prediction: Sequence[CaseMetrics] | None,
) -> MetricReport:
    if not segmentation:
        raise DataError("need at least one evaluated case")
    if prediction is not None and len(prediction) != len(segmentation):
        raise DataError("segmentation and prediction case lists disagree in length")
    return MetricReport(
        segmentation=tuple(segmentation),
        prediction=tuple(prediction) if prediction is not None else None,
    )
