"""Evaluation metrics and annotation-effort curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

NOT_REACHED = "NOT_REACHED"


def iou_counts(
    predictions: np.ndarray, gt: np.ndarray, num_classes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class (TP, FP, FN) counts for one prediction/gt pair."""
    if predictions.shape != gt.shape:
        raise DataError(f"prediction shape {predictions.shape} != gt {gt.shape}")
    pred = np.asarray(predictions).ravel()
    true = np.asarray(gt).ravel()
    conf = np.bincount(
        true.astype(np.int64) * num_classes + pred.astype(np.int64),
        minlength=num_classes * num_classes,
    ).reshape(num_classes, num_classes)
    tp = np.diag(conf).astype(np.int64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    return tp, fp, fn


def miou_from_counts(tp: np.ndarray, fp: np.ndarray, fn: np.ndarray) -> float:
    """Mean IoU over classes with nonzero union; absent classes are excluded."""
    union = tp + fp + fn
    present = union > 0
    if not present.any():
        return 0.0
    iou = tp[present] / union[present]
    return float(iou.mean())


def compute_miou(
    pairs: Iterable[tuple[np.ndarray, np.ndarray]], num_classes: int
) -> float:
    """mIoU with TP/FP/FN accumulated over a whole split."""
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    for pred, gt in pairs:
        dtp, dfp, dfn = iou_counts(pred, gt, num_classes)
        tp += dtp
        fp += dfp
        fn += dfn
    return miou_from_counts(tp, fp, fn)


@dataclass
class CurvePoint:
    round: int
    pixel_frac: float
    click_frac: float
    miou: float


@dataclass
class ALCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def validate(self) -> None:
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.pixel_frac + 1e-12 < prev.pixel_frac or cur.click_frac + 1e-12 < prev.click_frac:
                raise DataError("curve fractions must be non-decreasing")

    def first_crossing(self, target_miou: float, axis: str) -> float | str:
        """Fraction (pixel or click) at the first round whose mIoU reaches the
        target; NOT_REACHED otherwise. Round granularity, no interpolation."""
        for point in self.points:
            if point.miou >= target_miou:
                return point.pixel_frac if axis == "pixel" else point.click_frac
        return NOT_REACHED


def average_curves(curves: Sequence[ALCurve]) -> ALCurve:
    """Pointwise mean per round index over the repetitions reaching it."""
    if not curves:
        raise DataError("no curves to average")
    longest = max(len(c.points) for c in curves)
    out = []
    for i in range(longest):
        at_i = [c.points[i] for c in curves if len(c.points) > i]
        out.append(
            CurvePoint(
                round=i,
                pixel_frac=float(np.mean([p.pixel_frac for p in at_i])),
                click_frac=float(np.mean([p.click_frac for p in at_i])),
                miou=float(np.mean([p.miou for p in at_i])),
            )
        )
    return ALCurve(points=out)


def performance_index(curve: ALCurve, p100_miou: float) -> dict:
    target = 0.95 * p100_miou
    return {
        "p95": curve.first_crossing(target, "pixel"),
        "c95": curve.first_crossing(target, "click"),
        "p100_miou": p100_miou,
        "target_miou": target,
    }


def write_curve_csv(curve: ALCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "pixel_frac", "click_frac", "miou"])
        for p in curve.points:
            writer.writerow([p.round, f"{p.pixel_frac:.8f}", f"{p.click_frac:.8f}", f"{p.miou:.8f}"])


def read_curve_csv(path: str | Path) -> ALCurve:
    points = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            points.append(
                CurvePoint(
                    round=int(row["round"]),
                    pixel_frac=float(row["pixel_frac"]),
                    click_frac=float(row["click_frac"]),
                    miou=float(row["miou"]),
                )
            )
    return ALCurve(points=points)
