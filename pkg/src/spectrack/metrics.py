"""One-pass tracking metrics: AO, SR_50/75, success AUC, precision.

Frame 0 is the initialization frame and is excluded from every average.
Success counts use a strict ``IoU > threshold`` test; the AUC averages the
success rate over the 101 thresholds 0.00, 0.01, ..., 1.00, so a perfect
tracker scores 100/101 rather than 1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .volume import BBox, Trajectory

AUC_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_PX = 20.0
NORM_PRECISION = 0.2


@dataclass
class EvalReport:
    auc: float
    ao: float
    sr50: float
    sr75: float
    prec: float
    prec_norm: float
    per_frame_iou: list = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_frame_iou")
        return d

    def to_dict(self) -> dict:
        return asdict(self)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def center_error(pred: Optional[BBox], gt: BBox) -> float:
    if pred is None:
        return math.inf
    (px, py), (gx, gy) = pred.center, gt.center
    return math.hypot(px - gx, py - gy)


def normalized_center_error(pred: Optional[BBox], gt: BBox) -> float:
    """Center offset with x scaled by GT width and y by GT height."""
    if pred is None:
        return math.inf
    (px, py), (gx, gy) = pred.center, gt.center
    return math.hypot((px - gx) / gt.width, (py - gy) / gt.height)


def success_rate(ious, threshold: float) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    return float(np.mean(ious > threshold))


def evaluate(pred: Trajectory, gt: Trajectory) -> EvalReport:
    if len(pred) != len(gt):
        raise ValidationError(f"prediction has {len(pred)} frames, ground truth {len(gt)}")
    if any(g is None for g in gt):
        raise ValidationError("ground truth must have a box on every frame")
    if len(gt) < 2:
        raise ValidationError("need at least one frame after the initialization frame")
    pairs = list(zip(pred[1:], gt[1:]))
    ious = np.array([0.0 if p is None else iou(p, g) for p, g in pairs])
    dist = np.array([center_error(p, g) for p, g in pairs])
    ndist = np.array([normalized_center_error(p, g) for p, g in pairs])
    curve = (ious[None, :] > AUC_THRESHOLDS[:, None]).mean(axis=1)
    return EvalReport(
        auc=float(curve.mean()),
        ao=float(ious.mean()),
        sr50=success_rate(ious, 0.5),
        sr75=success_rate(ious, 0.75),
        prec=float(np.mean(dist <= PRECISION_PX)),
        prec_norm=float(np.mean(ndist <= NORM_PRECISION)),
        per_frame_iou=[float(v) for v in ious],
    )


def mean_report(reports) -> EvalReport:
    """Average summary metrics over sequences (per-frame IoUs concatenated)."""
    reports = list(reports)
    if not reports:
        raise ValidationError("no reports to average")
    keys = ("auc", "ao", "sr50", "sr75", "prec", "prec_norm")
    avg = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    frames = [v for r in reports for v in r.per_frame_iou]
    return EvalReport(per_frame_iou=frames, **avg)
