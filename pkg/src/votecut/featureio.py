"""File formats: patch-feature tensors (VCFT), annotation JSON, and PPM images.

The VCFT layout is the interchange contract with feature exporters:
magic ``VCFT``, four little-endian uint32 header words (version, grid_h,
grid_w, dim), then ``grid_h * grid_w * dim`` little-endian float32 values
in row-major ``[grid_h][grid_w][dim]`` order. Readers reject any file whose
declared sizes disagree with the payload length.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import BinaryMask, BoundingBox, rle_decode, rle_encode
from .errors import DataError, FormatError

VCFT_MAGIC = b"VCFT"
VCFT_VERSION = 1


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Per-image, per-model grid of d-dimensional patch feature vectors."""

    model_id: str
    grid_h: int
    grid_w: int
    dim: int
    data: np.ndarray  # float32, shape (grid_h, grid_w, dim)

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1 or self.dim < 1:
            raise ValueError("grid dimensions and feature dim must be >= 1")
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.size != self.grid_h * self.grid_w * self.dim:
            raise FormatError(
                f"data length {arr.size} != grid_h*grid_w*dim = "
                f"{self.grid_h * self.grid_w * self.dim}"
            )
        arr = arr.reshape(self.grid_h, self.grid_w, self.dim).copy()
        if not np.all(np.isfinite(arr)):
            raise DataError("feature values must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    def vectors(self) -> np.ndarray:
        """Patch features flattened to (n_patches, dim), row-major over the grid."""
        return self.data.reshape(-1, self.dim)


def read_feature_file(path, model_id: str | None = None) -> FeatureMap:
    """Parse a VCFT file; ``model_id`` defaults to the penultimate filename part."""
    import os

    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise FormatError(f"{path}: file too short for a VCFT header")
    if blob[:4] != VCFT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {VCFT_MAGIC!r}")
    version, grid_h, grid_w, dim = struct.unpack("<4I", blob[4:20])
    if version != VCFT_VERSION:
        raise FormatError(f"{path}: unsupported VCFT version {version}")
    if grid_h < 1 or grid_w < 1 or dim < 1:
        raise FormatError(f"{path}: non-positive dimensions in header")
    expected = grid_h * grid_w * dim * 4
    payload = blob[20:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(grid_h, grid_w, dim)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path}: non-finite feature values")
    if model_id is None:
        parts = os.path.basename(str(path)).split(".")
        model_id = parts[-2] if len(parts) >= 3 else ""
    return FeatureMap(model_id, grid_h, grid_w, dim, data)


def write_feature_file(fm: FeatureMap, path) -> None:
    """Write the byte-exact VCFT form of ``fm``."""
    header = VCFT_MAGIC + struct.pack(
        "<4I", VCFT_VERSION, fm.grid_h, fm.grid_w, fm.dim
    )
    payload = np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


@dataclass(frozen=True)
class ImageRecord:
    id: object
    file_name: str
    width: int
    height: int


@dataclass(frozen=True, eq=False)
class Annotation:
    image_id: object
    box: BoundingBox
    score: float
    mask: BinaryMask

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"annotation score {self.score} outside [0, 1]")


@dataclass
class AnnotationSet:
    """Class-agnostic instances grouped with their image directory."""

    images: list = field(default_factory=list)
    annotations: list = field(default_factory=list)

    def __post_init__(self):
        ids = {im.id for im in self.images}
        for ann in self.annotations:
            if ann.image_id not in ids:
                raise DataError(
                    f"annotation references unknown image id {ann.image_id!r}"
                )

    def by_image(self) -> dict:
        grouped = {im.id: [] for im in self.images}
        for ann in self.annotations:
            grouped[ann.image_id].append(ann)
        return grouped


def _require(condition: bool, message: str):
    if not condition:
        raise FormatError(message)


def read_annotations(path) -> AnnotationSet:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    _require(isinstance(doc, dict), "annotation document must be a JSON object")
    _require("images" in doc and "annotations" in doc,
             'annotation document needs top-level "images" and "annotations"')
    images = []
    for entry in doc["images"]:
        _require(isinstance(entry, dict), "image entry must be an object")
        for key in ("id", "file_name", "width", "height"):
            _require(key in entry, f'image entry missing "{key}"')
        images.append(
            ImageRecord(entry["id"], entry["file_name"],
                        int(entry["width"]), int(entry["height"]))
        )
    annotations = []
    for entry in doc["annotations"]:
        _require(isinstance(entry, dict), "annotation entry must be an object")
        for key in ("image_id", "bbox", "score", "segmentation"):
            _require(key in entry, f'annotation entry missing "{key}"')
        bbox = entry["bbox"]
        _require(isinstance(bbox, list) and len(bbox) == 4,
                 "bbox must be a 4-element [x, y, w, h] list")
        seg = entry["segmentation"]
        _require(isinstance(seg, dict) and "size" in seg and "counts" in seg,
                 'segmentation must be {"size": [h, w], "counts": [...]}')
        h, w = seg["size"]
        mask = rle_decode(seg["counts"], int(h), int(w))
        score = float(entry["score"])
        if not 0.0 <= score <= 1.0:
            raise FormatError(f"annotation score {score} outside [0, 1]")
        annotations.append(
            Annotation(
                image_id=entry["image_id"],
                box=BoundingBox(*[int(v) for v in bbox]),
                score=score,
                mask=mask,
            )
        )
    try:
        return AnnotationSet(images, annotations)
    except DataError as exc:
        raise FormatError(str(exc)) from exc


def write_annotations(aset: AnnotationSet, path) -> None:
    doc = {
        "images": [
            {"id": im.id, "file_name": im.file_name,
             "width": im.width, "height": im.height}
            for im in aset.images
        ],
        "annotations": [
            {
                "image_id": ann.image_id,
                "bbox": ann.box.as_xywh(),
                "score": ann.score,
                "segmentation": {
                    "size": [ann.mask.height, ann.mask.width],
                    "counts": rle_encode(ann.mask),
                },
            }
            for ann in aset.annotations
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, separators=(",", ":"), sort_keys=True)
        f.write("\n")


def read_ppm(path) -> np.ndarray:
    """Read a binary (P6) portable pixmap as a uint8 (H, W, 3) array."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    # header = 4 whitespace-separated tokens, '#' comments allowed
    while len(tokens) < 4 and i < len(blob):
        while i < len(blob) and blob[i : i + 1].isspace():
            i += 1
        if i < len(blob) and blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(blob) and not blob[i : i + 1].isspace():
            i += 1
        if i > start:
            tokens.append(blob[start:i])
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PPM supported, maxval={maxval}")
    i += 1  # single whitespace byte after maxval
    pixels = blob[i:]
    if len(pixels) != width * height * 3:
        raise FormatError(
            f"{path}: pixel payload is {len(pixels)} bytes, "
            f"expected {width * height * 3}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(image: np.ndarray, path) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError("PPM writer needs an (H, W, 3) uint8 array")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(image).tobytes())
