"""Detection (FPPI / log-average miss rate) and tracking (OPE) evaluation.

Detection follows the Caltech-style protocol: greedy confidence-ordered
matching at an IoU threshold per frame, a miss-rate-versus-FPPI curve
swept over observed confidences, and the geometric mean of miss rates
sampled at 9 log-spaced FPPI reference points in [1e-2, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .localizer import BoundingBox, iou

MR_FLOOR = 1e-10
FPPI_REFERENCES = np.logspace(-2.0, 0.0, 9)
OPE_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.05), 2)


@dataclass
class DetectionRecord:
    """Ground truth and scored detections for one evaluated frame."""

    gts: list[BoundingBox] = field(default_factory=list)
    dets: list[tuple[BoundingBox, float]] = field(default_factory=list)


@dataclass
class Trajectory:
    """Per-frame boxes for one track; frame indices contiguous."""

    frames: list[int]
    boxes: list[BoundingBox]

    def __post_init__(self):
        if len(self.frames) != len(self.boxes) or not self.frames:
            raise ValueError("trajectory needs one box per frame, at least one")
        for a, b in zip(self.frames, self.frames[1:]):
            if b != a + 1:
                raise ValueError("trajectory frame indices must increase by 1")


def match_frame(dets: list[tuple[BoundingBox, float]], gts: list[BoundingBox],
                iou_thresh: float = 0.5) -> tuple[int, int, int]:
    """Greedy matching in confidence order; returns (TP, FP, missed)."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][1])
    claimed = [False] * len(gts)
    tp = fp = 0
    for i in order:
        box = dets[i][0]
        best_j, best_v = -1, -1.0
        for j, gt in enumerate(gts):
            if claimed[j]:
                continue
            v = iou(box, gt)
            if v >= iou_thresh and v > best_v:  # strict > ties to the lower index
                best_j, best_v = j, v
        if best_j >= 0:
            claimed[best_j] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, claimed.count(False)


def fppi_mr_curve(records: list[DetectionRecord],
                  iou_thresh: float = 0.5) -> list[tuple[float, float]]:
    """Miss rate vs. false positives per image, swept over all confidences."""
    n_frames = len(records)
    n_gts = sum(len(r.gts) for r in records)
    confs = sorted({c for r in records for _, c in r.dets}, reverse=True)
    if not confs:
        return [(0.0, 1.0 if n_gts else 0.0)]
    points = []
    for thr in confs:
        fp_total = missed_total = 0
        for r in records:
            kept = [(b, c) for b, c in r.dets if c >= thr]
            _, fp, missed = match_frame(kept, r.gts, iou_thresh)
            fp_total += fp
            missed_total += missed
        fppi = fp_total / n_frames if n_frames else 0.0
        mr = missed_total / n_gts if n_gts else 0.0
        points.append((fppi, mr))
    points.sort(key=lambda p: (p[0], p[1]))
    return points


def log_average_mr(curve: list[tuple[float, float]]) -> float:
    """Geometric mean of miss rates at the 9 log-spaced FPPI references.

    At each reference the miss rate of the largest curve FPPI not above
    it is used; references below the whole curve fall back to the
    highest miss rate observed.
    """
    if not curve:
        raise ValueError("empty curve")
    worst = max(m for _, m in curve)
    logs = []
    for ref in FPPI_REFERENCES:
        eligible = [(f, m) for f, m in curve if f <= ref]
        if eligible:
            fmax = max(f for f, _ in eligible)
            m = min(m for f, m in eligible if f == fmax)
        else:
            m = worst
        logs.append(np.log(max(m, MR_FLOOR)))
    return float(np.exp(np.mean(logs)))


def ope_success(pred: Trajectory, gt: Trajectory,
                thresholds: np.ndarray = OPE_THRESHOLDS) -> list[tuple[float, float]]:
    """Fraction of overlapping frames with IoU strictly above each threshold."""
    gt_by_frame = dict(zip(gt.frames, gt.boxes))
    overlaps = [iou(pb, gt_by_frame[f])
                for f, pb in zip(pred.frames, pred.boxes) if f in gt_by_frame]
    if not overlaps:
        return [(float(t), 0.0) for t in thresholds]
    arr = np.asarray(overlaps)
    return [(float(t), float((arr > t).mean())) for t in thresholds]


def success_auc(curve: list[tuple[float, float]]) -> float:
    return float(np.mean([s for _, s in curve]))
