"""Guidance combinators applied to noise predictions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MODES = ("none", "classic", "negative_prompt")
RESCALE_AXES = ("channel", "global")
DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class GuidanceParams:
    weight: float = 50.0
    rescale_phi: float = 0.5
    mode: str = "negative_prompt"
    rescale_enabled: bool = True
    rescale_axes: str = "channel"

    def __post_init__(self):
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"guidance weight must be finite and >= 0, got {self.weight}")
        if not 0.0 <= self.rescale_phi <= 1.0:
            raise ValueError(f"rescale_phi must lie in [0, 1], got {self.rescale_phi}")
        if self.mode not in MODES:
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.rescale_axes not in RESCALE_AXES:
            raise ValueError(f"unknown rescale axes {self.rescale_axes!r}")


@dataclass(frozen=True)
class ScorePair:
    """Two predictions at the same noisy input: conditional (or positive) and reference."""

    primary: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        if np.shape(self.primary) != np.shape(self.reference):
            raise ValueError(
                f"score pair shape mismatch: {np.shape(self.primary)} vs {np.shape(self.reference)}"
            )


def cfg_combine(pair: ScorePair, omega: float) -> np.ndarray:
    """Classic guidance: ``(1 + omega) * primary - omega * reference``."""
    return (1.0 + omega) * pair.primary - omega * pair.reference


def cfg_negative(pair: ScorePair, w: float) -> np.ndarray:
    """Negative-prompt guidance: ``reference + w * (primary - reference)``.

    Evaluated as ``(1 - w) * reference + w * primary`` so that w=1 and w=0
    return the primary and reference predictions exactly.
    """
    return (1.0 - w) * pair.reference + w * pair.primary


def _std(x: np.ndarray, axes: str) -> np.ndarray:
    if axes == "global":
        return np.std(x, axis=(-3, -2, -1), keepdims=True)
    return np.std(x, axis=(-2, -1), keepdims=True)


def rescale_cfg(x_pos: np.ndarray, x_cfg: np.ndarray, phi: float, axes: str = "channel") -> np.ndarray:
    """Blend the guided prediction with a copy renormalized to the positive prediction's std.

    Std is taken per channel over the spatial axes (or over C×H×W with
    ``axes="global"``). Channels whose guided std is below 1e-12 pass through
    unrescaled.
    """
    x_pos = np.asarray(x_pos)
    x_cfg = np.asarray(x_cfg)
    if x_pos.shape != x_cfg.shape:
        raise ValueError(f"rescale_cfg shape mismatch: {x_pos.shape} vs {x_cfg.shape}")
    if phi == 0:
        return x_cfg.copy()
    std_pos = _std(x_pos, axes)
    std_cfg = _std(x_cfg, axes)
    degenerate = std_cfg < DEGENERATE_STD
    if np.any(degenerate):
        log.warning("rescale_cfg: %d degenerate channel(s) left unrescaled", int(degenerate.sum()))
    ratio = np.where(degenerate, 1.0, std_pos / np.where(degenerate, 1.0, std_cfg))
    rescaled = np.where(degenerate, x_cfg, x_cfg * ratio)
    return phi * rescaled + (1.0 - phi) * x_cfg
