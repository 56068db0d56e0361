"""Grid snapshots (``VOXG``) and binary PPM images."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import VoxelGrid

VOXG_MAGIC = b"VOXG"


class GridFormatError(ValueError):
    """A grid file is malformed; the message carries the byte offset."""


def grid_to_bytes(grid: VoxelGrid) -> bytes:
    D = grid.resolution
    return b"".join([
        VOXG_MAGIC,
        struct.pack("<I", D),
        grid.density_logits.astype("<f4").tobytes(),
        grid.color_logits.astype("<f4").tobytes(),
    ])


def grid_from_bytes(data: bytes) -> VoxelGrid:
    if len(data) < 4 or data[:4] != VOXG_MAGIC:
        raise GridFormatError(f"offset 0: bad magic {data[:4]!r}, expected {VOXG_MAGIC!r}")
    if len(data) < 8:
        raise GridFormatError(f"offset 4: truncated header, file has {len(data)} bytes")
    (D,) = struct.unpack_from("<I", data, 4)
    if D == 0:
        raise GridFormatError("offset 4: grid resolution is zero")
    n = D**3
    expected = 8 + 4 * n * 4
    if len(data) != expected:
        at = 8 if len(data) < 8 + 4 * n else 8 + 4 * n
        raise GridFormatError(
            f"offset {at}: size mismatch for D={D}, expected {expected} bytes total, got {len(data)}"
        )
    density = np.frombuffer(data, dtype="<f4", count=n, offset=8).reshape(D, D, D)
    color = np.frombuffer(data, dtype="<f4", count=3 * n, offset=8 + 4 * n).reshape(3, D, D, D)
    return VoxelGrid(density.astype(np.float64), color.astype(np.float64))


def save_grid(path, grid: VoxelGrid) -> None:
    Path(path).write_bytes(grid_to_bytes(grid))


def load_grid(path) -> VoxelGrid:
    return grid_from_bytes(Path(path).read_bytes())


def image_to_ppm(image: np.ndarray) -> bytes:
    """3×H×W float image in [0, 1] -> P6 bytes, values rounded half-up to 0..255."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected a 3×H×W image, got shape {image.shape}")
    _, h, w = image.shape
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def ppm_to_image(data: bytes) -> np.ndarray:
    """Inverse of :func:`image_to_ppm` (header comments are not supported)."""
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError(f"offset {pos}: truncated PPM header")
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6" or not all(f.isdigit() for f in fields[1:]) or int(fields[3]) != 255:
        raise ValueError("not a P6 PPM with maxval 255")
    w, h = int(fields[1]), int(fields[2])
    if len(data) < pos + 1 + w * h * 3:
        raise ValueError(f"offset {pos + 1}: truncated PPM pixel data")
    pix = np.frombuffer(data[pos + 1: pos + 1 + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return pix.transpose(2, 0, 1).astype(np.float64) / 255.0


def save_ppm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(image_to_ppm(image))
