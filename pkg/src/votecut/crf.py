"""Dense pairwise CRF refinement of binary masks by mean-field inference.

Two labels (background, foreground), Potts compatibility, and two Gaussian
pairwise kernels: an appearance kernel over position and color, and a
smoothness kernel over position only. Messages are computed brute force
over all pixel pairs, blocked for memory; inputs larger than ``max_side``
are refined at reduced resolution and the labeling is upsampled back.
Exactness is preferred over speed, so there is no approximate filtering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryMask
from .errors import ShapeMismatchError

_BLOCK_ROWS = 256


@dataclass(frozen=True)
class CrfParams:
    iterations: int = 10
    w_app: float = 4.0
    theta_alpha: float = 40.0
    theta_beta: float = 13.0
    w_sm: float = 3.0
    theta_gamma: float = 3.0
    unary_fg: float = 0.9
    max_side: int = 160

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 < self.unary_fg < 1.0:
            raise ValueError("unary_fg must lie strictly inside (0, 1)")
        for name in ("theta_alpha", "theta_beta", "theta_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_side < 1:
            raise ValueError("max_side must be >= 1")


@dataclass(frozen=True, eq=False)
class MarginalField:
    """Per-pixel two-class distribution; channel 0 is background, 1 foreground."""

    probs: np.ndarray  # (H, W, 2)

    def __post_init__(self):
        if self.probs.ndim != 3 or self.probs.shape[2] != 2:
            raise ValueError("marginals must have shape (H, W, 2)")

    @property
    def q_bg(self) -> np.ndarray:
        return self.probs[..., 0]

    @property
    def q_fg(self) -> np.ndarray:
        return self.probs[..., 1]

    def foreground_mask(self) -> BinaryMask:
        return BinaryMask.from_array(self.q_fg > self.q_bg)


@dataclass(frozen=True, eq=False)
class PairwiseKernels:
    """Gaussian kernels as (weight, scaled feature matrix) pairs."""

    terms: tuple  # of (weight, (N, F) float64 array)
    height: int
    width: int


def build_kernels(image_rgb: np.ndarray, params: CrfParams) -> PairwiseKernels:
    """Scaled feature vectors for the appearance and smoothness kernels."""
    h, w = image_rgb.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    pos = np.stack([xs.ravel(), ys.ravel()], axis=1)
    color = image_rgb.reshape(-1, 3).astype(np.float64)
    appearance = np.concatenate(
        [pos / params.theta_alpha, color / params.theta_beta], axis=1
    )
    smoothness = pos / params.theta_gamma
    return PairwiseKernels(
        terms=((params.w_app, appearance), (params.w_sm, smoothness)),
        height=h,
        width=w,
    )


def _kernel_message(features: np.ndarray, q_flat: np.ndarray) -> np.ndarray:
    """Sum_j exp(-||f_i - f_j||^2 / 2) q_j for every i, self term excluded."""
    n = features.shape[0]
    sq = np.einsum("ij,ij->i", features, features)
    out = np.empty_like(q_flat)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (
            features[start:stop] @ features.T
        )
        np.maximum(d2, 0.0, out=d2)
        kernel = np.exp(-0.5 * d2)
        out[start:stop] = kernel @ q_flat
    return out - q_flat  # remove each pixel's own unit contribution


def meanfield_step(q: MarginalField, kernels: PairwiseKernels,
                   unary: np.ndarray) -> MarginalField:
    """One synchronous mean-field update; returns normalized marginals."""
    h, w = kernels.height, kernels.width
    q_flat = q.probs.reshape(-1, 2)
    message = np.zeros_like(q_flat)
    for weight, features in kernels.terms:
        if weight == 0.0:
            continue
        message += weight * _kernel_message(features, q_flat)
    # Potts compatibility: each class is penalized by the other's message
    penalty = message[:, ::-1]
    logits = -unary.reshape(-1, 2) - penalty
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return MarginalField(probs=probs.reshape(h, w, 2))


def mask_unary(mask_bits: np.ndarray, unary_fg: float) -> np.ndarray:
    """Negative log-probabilities (H, W, 2) from a hard mask labeling."""
    p_fg = np.where(mask_bits, unary_fg, 1.0 - unary_fg)
    return -np.log(np.stack([1.0 - p_fg, p_fg], axis=-1))


def initial_marginals(unary: np.ndarray) -> MarginalField:
    logits = -unary - (-unary).max(axis=-1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=-1, keepdims=True)
    return MarginalField(probs=probs)


def _nearest_resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = arr.shape[:2]
    rows = (np.arange(out_h) * in_h) // out_h
    cols = (np.arange(out_w) * in_w) // out_w
    return arr[rows][:, cols]


def crf_refine(mask: BinaryMask, image_rgb: np.ndarray,
               params: CrfParams) -> BinaryMask:
    """Refine a mask against its image; returns the argmax labeling.

    With both pairwise weights at zero (or zero iterations) the unary term
    decides alone and the input mask comes back unchanged.
    """
    image_rgb = np.asarray(image_rgb)
    if image_rgb.ndim != 3 or image_rgb.shape[2] != 3:
        raise ShapeMismatchError("image must be an (H, W, 3) array")
    h, w = image_rgb.shape[:2]
    if (mask.height, mask.width) != (h, w):
        raise ShapeMismatchError(
            f"mask {(mask.height, mask.width)} and image {(h, w)} dimensions differ"
        )

    side = max(h, w)
    if side > params.max_side:
        work_h = max(1, (h * params.max_side) // side)
        work_w = max(1, (w * params.max_side) // side)
        bits = _nearest_resize(mask.bits, work_h, work_w)
        image = _nearest_resize(image_rgb, work_h, work_w)
    else:
        work_h, work_w = h, w
        bits = mask.bits
        image = image_rgb

    unary = mask_unary(bits, params.unary_fg)
    q = initial_marginals(unary)
    kernels = build_kernels(image, params)
    for _ in range(params.iterations):
        q = meanfield_step(q, kernels, unary)

    labels = q.q_fg > q.q_bg
    if (work_h, work_w) != (h, w):
        labels = _nearest_resize(labels, h, w)
    return BinaryMask.from_array(labels)
