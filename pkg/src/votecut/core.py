"""Domain types and geometric primitives shared by the whole pipeline.

Masks are immutable boolean rasters, boxes are half-open pixel rectangles
with a top-left origin, and run-length encoding follows the column-major
zeros-first convention used by the common annotation tooling so files can
be exchanged with it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyMaskError, FormatError, ShapeMismatchError


def _as_readonly_bool(bits, height: int, width: int) -> np.ndarray:
    arr = np.ascontiguousarray(bits, dtype=bool)
    if arr.ndim == 1:
        if arr.size != height * width:
            raise ShapeMismatchError(
                f"bits length {arr.size} != height*width = {height * width}"
            )
        arr = arr.reshape(height, width)
    if arr.shape != (height, width):
        raise ShapeMismatchError(f"bits shape {arr.shape} != ({height}, {width})")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major boolean raster of ``height`` x ``width`` pixels."""

    height: int
    width: int
    bits: np.ndarray

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("mask dimensions must be >= 1")
        object.__setattr__(
            self, "bits", _as_readonly_bool(self.bits, self.height, self.width)
        )

    @classmethod
    def from_array(cls, arr) -> "BinaryMask":
        arr = np.asarray(arr, dtype=bool)
        if arr.ndim != 2:
            raise ShapeMismatchError("mask array must be 2-D")
        return cls(arr.shape[0], arr.shape[1], arr)

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, np.ones((height, width), dtype=bool))

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def is_empty(self) -> bool:
        return not self.bits.any()

    def same_as(self, other: "BinaryMask") -> bool:
        return (
            self.height == other.height
            and self.width == other.width
            and bool(np.array_equal(self.bits, other.bits))
        )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle, top-left origin, half-open: ``[x, x+w) x [y, y+h)``."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError("box width and height must be >= 1")
        if self.x < 0 or self.y < 0:
            raise ValueError("box origin must be non-negative")

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_xywh(self) -> list:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, eq=False)
class ScoredInstance:
    """One discovered object: mask, its tight box, and a consensus score in [0, 1]."""

    mask: BinaryMask
    box: BoundingBox
    score: float
    image_id: object

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.box != tight_bbox(self.mask):
            raise ValueError("box must be the tight bounding box of the mask")


def default_crf_params():
    # local import: crf depends on core types
    from .crf import CrfParams

    return CrfParams()


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of the discovery pipeline.

    Defaults reproduce the standard operating point: affinity threshold
    0.15, cluster-membership IoU 0.6, vote threshold 0.2, eigenvector
    clusterings for k = 2..3, at most 10 instances kept per image.
    """

    tau_ncut: float = 0.15
    tau_c: float = 0.6
    tau_m: float = 0.2
    k_max: int = 3
    max_instances: int = 10
    tau_iou: float = 0.01
    min_keep_score: float = 0.2
    crf_params: object = field(default_factory=default_crf_params)

    def __post_init__(self):
        for name in ("tau_ncut", "tau_c", "tau_m", "tau_iou", "min_keep_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if self.max_instances < 1:
            raise ValueError("max_instances must be >= 1")

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatchError(
            f"mask shapes differ: {(a.height, a.width)} vs {(b.height, b.width)}"
        )
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return inter / union


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Rectangle IoU under the half-open convention."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def tight_bbox(mask: BinaryMask) -> BoundingBox:
    """Minimal box covering every set bit; raises on an empty mask."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot bound an empty mask")
    cols = np.flatnonzero(mask.bits.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return BoundingBox(x=x0, y=y0, w=x1 - x0 + 1, h=y1 - y0 + 1)


def rle_encode(mask: BinaryMask) -> list:
    """Column-major run-length counts, first run counting zeros.

    An all-zero mask encodes to a single count; a mask starting with a set
    bit gets a leading zero count.
    """
    flat = mask.bits.flatten(order="F")
    # run boundaries wherever the value changes
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(starts).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(counts, height: int, width: int) -> BinaryMask:
    """Inverse of :func:`rle_encode`; validates that counts fill the raster."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise FormatError("run-length counts must be non-negative")
    total = sum(counts)
    if total != height * width:
        raise FormatError(
            f"run-length counts sum to {total}, expected {height * width}"
        )
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    val = False
    for c in counts:
        if val:
            flat[pos : pos + c] = True
        pos += c
        val = not val
    return BinaryMask(height, width, flat.reshape((height, width), order="F"))
