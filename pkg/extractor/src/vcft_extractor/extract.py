"""Feature export: load a backbone, run images through it, write VCFT files.

Without a checkpoint the backbone is randomly initialized from a seed
derived from the model id; exported tensors are then only structurally
meaningful (grid geometry, finiteness, format), which is what the export
contract guarantees. Supply ``weights`` for real features.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .vcft import VcftError, read_vcft, write_vcft
from .vit import VisionTransformer, load_checkpoint

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff")


@dataclass(frozen=True)
class ModelInfo:
    family: str  # "dino" | "dinov2"
    patch_size: int
    dim: int
    depth: int
    num_heads: int
    input_side: int
    default_tap: str


MODEL_TABLE = {
    "dino_vits16": ModelInfo("dino", 16, 384, 12, 6, 480, "keys"),
    "dino_vits8": ModelInfo("dino", 8, 384, 12, 6, 480, "keys"),
    "dino_vitb16": ModelInfo("dino", 16, 768, 12, 12, 480, "keys"),
    "dino_vitb8": ModelInfo("dino", 8, 768, 12, 12, 480, "keys"),
    "dinov2_vits14": ModelInfo("dinov2", 14, 384, 12, 6, 476, "outputs"),
    "dinov2_vitb14": ModelInfo("dinov2", 14, 768, 12, 12, 476, "outputs"),
}


@dataclass(frozen=True)
class ExtractorSpec:
    model_id: str
    input_side: int = 0  # 0: use the model's native side
    feature_kind: str = ""  # "": use the model's native tap

    def __post_init__(self):
        if self.model_id not in MODEL_TABLE:
            raise ValueError(
                f"unknown model id {self.model_id!r}; "
                f"expected one of {sorted(MODEL_TABLE)}"
            )
        info = MODEL_TABLE[self.model_id]
        side = self.input_side or info.input_side
        if side % info.patch_size != 0:
            raise ValueError(
                f"input side {side} not divisible by patch {info.patch_size}"
            )
        object.__setattr__(self, "input_side", side)
        kind = self.feature_kind or info.default_tap
        if kind not in ("keys", "outputs"):
            raise ValueError(f"feature_kind must be keys|outputs, got {kind!r}")
        object.__setattr__(self, "feature_kind", kind)

    @property
    def info(self) -> ModelInfo:
        return MODEL_TABLE[self.model_id]

    @property
    def grid_side(self) -> int:
        return self.input_side // self.info.patch_size


def build_model(spec: ExtractorSpec, weights=None, seed: int = 0):
    info = spec.info
    if weights is None:
        digest = hashlib.sha256(f"{spec.model_id}:{seed}".encode()).digest()
        torch.manual_seed(int.from_bytes(digest[:8], "little"))
        log.warning(
            "no checkpoint supplied for %s; using seeded random weights "
            "(features are structurally valid but not semantically trained)",
            spec.model_id,
        )
    model = VisionTransformer(
        patch_size=info.patch_size,
        dim=info.dim,
        depth=info.depth,
        num_heads=info.num_heads,
        layerscale=info.family == "dinov2",
    )
    if weights is not None:
        missing, unexpected = load_checkpoint(model, weights)
        if missing:
            log.warning("%d parameter tensor(s) missing from checkpoint: %s",
                        len(missing), ", ".join(missing[:5]))
        if unexpected:
            log.info("%d unexpected checkpoint tensor(s) ignored", len(unexpected))
    model.eval()
    return model


def preprocess(path, input_side: int) -> torch.Tensor:
    """Square resize (aspect ratio not preserved) and normalization."""
    with Image.open(path) as img:
        img = img.convert("RGB").resize((input_side, input_side),
                                        Image.Resampling.BILINEAR)
        pixels = np.asarray(img, dtype=np.float32) / 255.0
    pixels = (pixels - np.array(IMAGENET_MEAN, dtype=np.float32)) / np.array(
        IMAGENET_STD, dtype=np.float32
    )
    return torch.from_numpy(pixels).permute(2, 0, 1).unsqueeze(0)


def list_images(images_dir: Path) -> list:
    return sorted(
        p for p in Path(images_dir).iterdir()
        if p.suffix.lower() in IMAGE_SUFFIXES
    )


def extract(images_dir, spec: ExtractorSpec, out_dir, weights=None,
            seed: int = 0) -> list:
    """Writes ``<image_stem>.<model_id>.vcft`` per image; returns the paths."""
    images = list_images(images_dir)
    if not images:
        raise FileNotFoundError(f"no images found under {images_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = build_model(spec, weights=weights, seed=seed)
    grid = spec.grid_side
    written = []
    with torch.inference_mode():
        for path in images:
            batch = preprocess(path, spec.input_side)
            feats = model.forward_features(batch, spec.feature_kind)
            feats = feats.reshape(grid, grid, spec.info.dim)
            data = feats.numpy().astype(np.float32)
            if not np.all(np.isfinite(data)):
                raise ValueError(f"{path}: non-finite features produced")
            out_path = out_dir / f"{path.stem}.{spec.model_id}.vcft"
            write_vcft(out_path, data)
            written.append(out_path)
            log.info("wrote %s (%dx%dx%d)", out_path, grid, grid, spec.info.dim)
    return written


@dataclass
class VerifyReport:
    checked: int = 0
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


def verify(out_dir) -> VerifyReport:
    """Re-read every exported file and check the export contract."""
    report = VerifyReport()
    paths = sorted(Path(out_dir).glob("*.vcft"))
    if not paths:
        report.problems.append(f"no .vcft files under {out_dir}")
        return report
    for path in paths:
        report.checked += 1
        parts = path.name.rsplit(".", 2)
        if len(parts) != 3:
            report.problems.append(f"{path.name}: cannot parse model id")
            continue
        model_id = parts[1]
        try:
            data = read_vcft(path)
        except VcftError as exc:
            report.problems.append(str(exc))
            continue
        if not np.all(np.isfinite(data)):
            report.problems.append(f"{path.name}: non-finite values")
        info = MODEL_TABLE.get(model_id)
        if info is None:
            report.problems.append(f"{path.name}: unknown model id {model_id!r}")
            continue
        expected = info.input_side // info.patch_size
        if data.shape[0] != expected or data.shape[1] != expected:
            report.problems.append(
                f"{path.name}: grid {data.shape[:2]} != expected "
                f"({expected}, {expected})"
            )
        if data.shape[2] != info.dim:
            report.problems.append(
                f"{path.name}: dim {data.shape[2]} != expected {info.dim}"
            )
    return report
