"""Class-agnostic detection and segmentation metrics.

Average precision uses 101-point interpolation with greedy score-ordered
one-to-one matching per image, mirroring the standard COCO protocol so
numbers are comparable; every instance belongs to the single "object"
category. AP averages the ten IoU thresholds 0.50:0.05:0.95 and AR caps
detections at 100 per image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import box_iou, mask_iou
from .errors import DataError

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_SAMPLES = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    ar100: float
    per_threshold: dict
    counts: tuple  # (num_images, num_gt, num_pred)
    warnings: tuple = ()

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ar100": self.ar100,
            "per_threshold": {f"{t:.2f}": v for t, v in self.per_threshold.items()},
            "counts": {
                "num_images": self.counts[0],
                "num_gt": self.counts[1],
                "num_pred": self.counts[2],
            },
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Predictions of one image at one threshold, in descending-score order."""

    scores: np.ndarray  # sorted descending (stable for ties)
    is_tp: np.ndarray  # bool, aligned with scores
    num_gt: int


def _instance_iou(pred, gt, iou_kind: str) -> float:
    if iou_kind == "box":
        return box_iou(pred.box, gt.box)
    if iou_kind == "mask":
        return mask_iou(pred.mask, gt.mask)
    raise ValueError(f"iou_kind must be 'box' or 'mask', got {iou_kind!r}")


def iou_table(preds, gts, iou_kind: str) -> np.ndarray:
    table = np.zeros((len(preds), len(gts)))
    for i, pred in enumerate(preds):
        for j, gt in enumerate(gts):
            table[i, j] = _instance_iou(pred, gt, iou_kind)
    return table


def _match_from_table(table: np.ndarray, scores: np.ndarray,
                      iou_thresh: float) -> MatchResult:
    order = np.argsort(-scores, kind="stable")
    num_gt = table.shape[1]
    taken = np.zeros(num_gt, dtype=bool)
    is_tp = np.zeros(order.size, dtype=bool)
    for rank, pred_idx in enumerate(order):
        best_j = -1
        best_iou = 0.0
        for j in range(num_gt):
            if taken[j]:
                continue
            iou = table[pred_idx, j]
            if iou >= iou_thresh and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            is_tp[rank] = True
    return MatchResult(scores=scores[order], is_tp=is_tp, num_gt=num_gt)


def match_instances(preds, gts, iou_thresh: float, iou_kind: str) -> MatchResult:
    """Greedy one-to-one matching: every prediction, in descending score
    order, takes the unmatched ground truth with the highest IoU at or
    above the threshold; the rest are false positives."""
    table = iou_table(preds, gts, iou_kind)
    scores = np.array([p.score for p in preds], dtype=np.float64)
    return _match_from_table(table, scores, iou_thresh)


def average_precision(matches) -> float:
    """101-point interpolated AP over per-image match results at one threshold."""
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        return 0.0
    scores = np.concatenate([m.scores for m in matches]) if matches else np.zeros(0)
    flags = np.concatenate([m.is_tp for m in matches]) if matches else np.zeros(0, bool)
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    flags = flags[order]
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    precision = tp / (tp + fp)
    recall = tp / num_gt
    # monotone nonincreasing envelope from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_SAMPLES, side="left")
    sampled = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
    return float(sampled.mean())


def recall_fraction(matches) -> float:
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        return 0.0
    matched = sum(int(m.is_tp.sum()) for m in matches)
    return matched / num_gt


def average_recall(per_threshold_matches: dict) -> float:
    """Recall averaged across the IoU threshold sweep (predictions already
    truncated to the per-image detection cap)."""
    return float(
        np.mean([recall_fraction(per_threshold_matches[t]) for t in IOU_THRESHOLDS])
    )


def evaluate(pred_set, gt_set, iou_kind: str, max_dets: int = 100) -> EvalReport:
    """Full report over two annotation sets sharing an image id space."""
    gt_by_image = gt_set.by_image()
    pred_by_image = pred_set.by_image()
    unknown = [i for i in pred_by_image if i not in gt_by_image]
    if unknown:
        raise DataError(f"predictions reference unknown image ids: {unknown!r}")

    warnings = []
    image_ids = sorted(gt_by_image, key=repr)
    num_gt = sum(len(v) for v in gt_by_image.values())
    num_pred = sum(len(v) for v in pred_by_image.values())
    if num_gt == 0:
        warnings.append("no ground-truth instances; all metrics reported as 0")

    per_threshold_matches = {t: [] for t in IOU_THRESHOLDS}
    for image_id in image_ids:
        gts = gt_by_image[image_id]
        preds = pred_by_image.get(image_id, [])
        preds = sorted(preds, key=lambda a: -a.score)[:max_dets]
        table = iou_table(preds, gts, iou_kind)
        scores = np.array([p.score for p in preds], dtype=np.float64)
        for t in IOU_THRESHOLDS:
            per_threshold_matches[t].append(_match_from_table(table, scores, t))

    per_threshold = {
        t: average_precision(per_threshold_matches[t]) for t in IOU_THRESHOLDS
    }
    ap = float(np.mean(list(per_threshold.values())))
    ar100 = average_recall(per_threshold_matches)
    return EvalReport(
        ap=ap,
        ap50=per_threshold[0.5],
        ap75=per_threshold[0.75],
        ar100=ar100,
        per_threshold=per_threshold,
        counts=(len(image_ids), num_gt, num_pred),
        warnings=tuple(warnings),
    )
