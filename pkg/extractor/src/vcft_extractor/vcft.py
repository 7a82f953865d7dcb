"""The VCFT tensor file contract: magic ``VCFT``, uint32 little-endian
header (version=1, grid_h, grid_w, dim), then row-major float32 payload."""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"VCFT"
VERSION = 1


class VcftError(ValueError):
    pass


def write_vcft(path, data: np.ndarray) -> None:
    """``data`` is (grid_h, grid_w, dim) float32."""
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 3:
        raise VcftError("feature tensor must be (grid_h, grid_w, dim)")
    grid_h, grid_w, dim = data.shape
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<4I", VERSION, grid_h, grid_w, dim))
        f.write(data.tobytes())


def read_vcft(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20 or blob[:4] != MAGIC:
        raise VcftError(f"{path}: not a VCFT file")
    version, grid_h, grid_w, dim = struct.unpack("<4I", blob[4:20])
    if version != VERSION:
        raise VcftError(f"{path}: unsupported version {version}")
    expected = grid_h * grid_w * dim * 4
    if len(blob) - 20 != expected:
        raise VcftError(
            f"{path}: payload {len(blob) - 20} bytes, header wants {expected}"
        )
    return np.frombuffer(blob[20:], dtype="<f4").reshape(grid_h, grid_w, dim)
