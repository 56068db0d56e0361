"""FreeU decoder-feature modification.

Backbone features get their first half of channels scaled by ``b``; skip
features get their low-frequency band (a centered square window in the
shifted spectrum) scaled by ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FreeUParams:
    b1: float = 1.0
    s1: float = 1.0
    b2: float = 1.0
    s2: float = 1.0
    r_threshold: float = 1.0

    def __post_init__(self):
        for name in ("b1", "s1", "b2", "s2", "r_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"FreeUParams.{name} must be finite")
        if self.r_threshold < 0:
            raise ValueError("r_threshold must be >= 0")

    def stage(self, stage: int) -> tuple[float, float]:
        """(backbone factor, skip factor) for decoder stage 1 or 2."""
        if stage == 1:
            return self.b1, self.s1
        if stage == 2:
            return self.b2, self.s2
        raise ValueError(f"unknown decoder stage {stage!r}; expected 1 or 2")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.b1, self.s1, self.b2, self.s2)


IDENTITY = FreeUParams()


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _check_pow2(shape) -> None:
    h, w = shape[-2:]
    if not (_is_pow2(h) and _is_pow2(w)):
        raise ValueError(f"spatial size must be powers of two, got {h}x{w}")


def fft2(image: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT over the last two axes, DC moved to the center bin ``(H//2, W//2)``."""
    image = np.asarray(image)
    _check_pow2(image.shape)
    return np.fft.fftshift(np.fft.fft2(image, norm="ortho"), axes=(-2, -1))


def ifft2(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2`; returns a complex array."""
    spectrum = np.asarray(spectrum)
    _check_pow2(spectrum.shape)
    return np.fft.ifft2(np.fft.ifftshift(spectrum, axes=(-2, -1)), norm="ortho")


def lowfreq_mask(h: int, w: int, r_threshold: float) -> np.ndarray:
    """Boolean H×W mask of centered-spectrum bins with Chebyshev distance < r_threshold from DC."""
    dy = np.abs(np.arange(h) - h // 2)[:, None]
    dx = np.abs(np.arange(w) - w // 2)[None, :]
    return np.maximum(dy, dx) < r_threshold


def _check_even_channels(x: np.ndarray) -> None:
    if x.ndim < 3:
        raise ValueError(f"feature map must be C×H×W, got shape {x.shape}")
    if x.shape[-3] % 2:
        raise ValueError(f"feature map needs an even channel count, got {x.shape[-3]}")


def scale_backbone(x: np.ndarray, b: float) -> np.ndarray:
    """Multiply channels ``i < C/2`` by ``b``; the upper half is copied untouched."""
    x = np.asarray(x)
    _check_even_channels(x)
    out = x.copy()
    if b != 1:
        half = x.shape[-3] // 2
        out[..., :half, :, :] *= b
    return out


def scale_skip_lowfreq(h: np.ndarray, s: float, r_threshold: float) -> np.ndarray:
    """Scale the low-frequency window of each channel's spectrum by ``s``."""
    h = np.asarray(h, dtype=np.float64)
    spec = fft2(h)
    mask = lowfreq_mask(h.shape[-2], h.shape[-1], r_threshold)
    spec = np.where(mask, spec * s, spec)
    return ifft2(spec).real


def apply_freeu(stage: int, backbone: np.ndarray, skip: np.ndarray, params: FreeUParams):
    """Modify the (backbone, skip) pair entering decoder ``stage`` before concatenation."""
    b, s = params.stage(stage)
    return scale_backbone(backbone, b), scale_skip_lowfreq(skip, s, params.r_threshold)
