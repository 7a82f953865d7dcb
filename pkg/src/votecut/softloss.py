"""Soft-target instance loss arithmetic and the self-training filter.

Confidence scores weight per-instance regression losses, a two-class
soft cross-entropy scores the objectness head, and predictions that miss
every target are gated out of the total entirely so a detector is never
penalized for exploring unannotated regions. No training happens here;
base losses arrive as opaque numbers and this module owns the weighting,
gating, and filtering algebra plus analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryMask, BoundingBox, mask_iou


@dataclass(frozen=True, eq=False)
class InstanceTarget:
    """Pseudo-label: consensus score, mask, and box of one instance."""

    score: float
    mask: BinaryMask
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class ClassLogits:
    """Raw two-class head outputs; softmax of these gives (fg, bg) probabilities."""

    z_f: float
    z_b: float

    def __post_init__(self):
        if not (np.isfinite(self.z_f) and np.isfinite(self.z_b)):
            raise ValueError("logits must be finite")


def weighted_instance_loss(base_losses, scores) -> float:
    """Sum of per-instance base losses, each weighted by its confidence.

    Serves both the box and the mask branch; with all scores at 1 it
    reduces to the plain unweighted sum.
    """
    if len(base_losses) != len(scores):
        raise ValueError(
            f"{len(base_losses)} losses vs {len(scores)} scores"
        )
    for s in scores:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"score {s} outside [0, 1]")
    total = 0.0
    for loss, score in zip(base_losses, scores):
        total += score * loss
    return total


def soft_cls_loss(logits: ClassLogits, y: float):
    """Soft binary cross-entropy against a fractional target.

    Returns ``(loss, (d/dz_f, d/dz_b))``. The loss is
    ``-(y log sigma_f + (1-y) log sigma_b)`` with (sigma_f, sigma_b) the
    two-class softmax of the logits, stabilized through log-sum-exp.
    """
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"target {y} outside [0, 1]")
    z = np.array([logits.z_f, logits.z_b], dtype=np.float64)
    m = z.max()
    lse = m + np.log(np.exp(z - m).sum())
    log_sigma_f = logits.z_f - lse
    log_sigma_b = logits.z_b - lse
    loss = -(y * log_sigma_f + (1.0 - y) * log_sigma_b)
    sigma_f = np.exp(log_sigma_f)
    grad_f = sigma_f - y
    return float(loss), (float(grad_f), float(-grad_f))


def droploss_gate(pred_masks, target_masks, tau_iou: float) -> list:
    """Per-prediction 0/1 gates: 1 iff the best target IoU strictly
    exceeds the threshold. With no targets every gate is 0, so an image
    without pseudo-labels contributes no supervision at all."""
    gates = []
    for pred in pred_masks:
        best = 0.0
        for target in target_masks:
            best = max(best, mask_iou(pred, target))
        gates.append(1 if best > tau_iou else 0)
    return gates


def total_loss(per_instance, gates) -> float:
    """Gated sum of per-instance (cls, box, mask) loss triples."""
    if len(per_instance) != len(gates):
        raise ValueError(f"{len(per_instance)} instances vs {len(gates)} gates")
    total = 0.0
    for (cls_loss, box_loss, mask_loss), gate in zip(per_instance, gates):
        total += gate * (cls_loss + box_loss + mask_loss)
    return total


def filter_pseudo_labels(instances, min_score: float) -> list:
    """Keep instances whose score is at least ``min_score``, order preserved."""
    return [inst for inst in instances if inst.score >= min_score]
