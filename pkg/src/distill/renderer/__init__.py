"""Emission-absorption voxel renderer with analytic gradients.

The ray-marching kernels come from the compiled ``_core`` extension when it is
built, otherwise from the numpy implementation in ``_fallback``. Set
``DISTILL_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _fallback

if os.environ.get("DISTILL_PURE_PYTHON"):
    _core = None
else:
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None

kernels = _core if _core is not None else _fallback
BACKEND = "cython" if _core is not None else "numpy"

BACKGROUND = 0.5
HALF_LENGTH = math.sqrt(3.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


@dataclass
class VoxelGrid:
    """Logit-parameterized D³ grid: density = softplus(logit), color = logistic(logit).

    Arrays are indexed ``[z, y, x]`` (x fastest); colors are channel-major ``(3, D, D, D)``.
    """

    density_logits: np.ndarray
    color_logits: np.ndarray

    def __post_init__(self):
        self.density_logits = np.asarray(self.density_logits, dtype=np.float64)
        self.color_logits = np.asarray(self.color_logits, dtype=np.float64)
        D = self.density_logits.shape[0]
        if self.density_logits.shape != (D, D, D) or self.color_logits.shape != (3, D, D, D):
            raise ValueError(
                f"inconsistent grid shapes {self.density_logits.shape} / {self.color_logits.shape}"
            )

    @property
    def resolution(self) -> int:
        return self.density_logits.shape[0]

    @classmethod
    def initial(cls, D: int = 16, density: float = 0.1, color: float = 0.5) -> "VoxelGrid":
        return cls(
            np.full((D, D, D), inverse_softplus(density)),
            np.full((3, D, D, D), math.log(color / (1.0 - color))),
        )

    def density(self) -> np.ndarray:
        return softplus(self.density_logits)

    def color(self) -> np.ndarray:
        return expit(self.color_logits)

    def copy(self) -> "VoxelGrid":
        return VoxelGrid(self.density_logits.copy(), self.color_logits.copy())

    def params(self) -> np.ndarray:
        """All logits flattened into one vector (density first)."""
        return np.concatenate([self.density_logits.ravel(), self.color_logits.ravel()])

    @classmethod
    def from_params(cls, D: int, vec: np.ndarray) -> "VoxelGrid":
        n = D**3
        return cls(vec[:n].reshape(D, D, D).copy(), vec[n:].reshape(3, D, D, D).copy())


@dataclass(frozen=True)
class CameraView:
    """Orthographic camera looking at the origin from (azimuth, elevation) in degrees, y up."""

    azimuth: float = 0.0
    elevation: float = 0.0
    frame: float = 1.0

    def __post_init__(self):
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation must lie in [-90, 90], got {self.elevation}")
        if self.frame <= 0:
            raise ValueError("frame half-extent must be positive")

    def basis(self):
        """(right, up, forward) unit vectors; forward is the ray direction."""
        a = math.radians(self.azimuth)
        e = math.radians(self.elevation)
        eye = np.array([math.cos(e) * math.sin(a), math.sin(e), math.cos(e) * math.cos(a)])
        forward = -eye
        right = np.array([math.cos(a), 0.0, -math.sin(a)])
        up = np.cross(right, forward)
        return right, up, forward

    def rays(self, size: int):
        """Ray start points (size², 3), row-major from the top-left pixel, and the shared direction."""
        right, up, forward = self.basis()
        c = ((np.arange(size) + 0.5) / size * 2.0 - 1.0) * self.frame
        xs = np.tile(c, size)
        ys = np.repeat(-c, size)
        origins = xs[:, None] * right + ys[:, None] * up - HALF_LENGTH * forward
        return np.ascontiguousarray(origins), np.ascontiguousarray(forward)


def _check(size: int, samples_per_ray: int) -> None:
    if size < 1:
        raise ValueError(f"render size must be >= 1, got {size}")
    if samples_per_ray < 2:
        raise ValueError(f"samples_per_ray must be >= 2, got {samples_per_ray}")


def _bg(background) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(np.asarray(background, dtype=np.float64), (3,)))


def render(grid: VoxelGrid, view: CameraView, size: int, samples_per_ray: int = 32,
           background=BACKGROUND, backend=None) -> np.ndarray:
    """Render a 3×size×size image."""
    _check(size, samples_per_ray)
    k = backend or kernels
    origins, direction = view.rays(size)
    out = k.render_rays(
        np.ascontiguousarray(grid.density()), np.ascontiguousarray(grid.color()),
        origins, direction, samples_per_ray, HALF_LENGTH, _bg(background),
    )
    return np.ascontiguousarray(out.T.reshape(3, size, size))


def render_grad(grid: VoxelGrid, view: CameraView, size: int, samples_per_ray: int,
                upstream: np.ndarray, background=BACKGROUND, backend=None) -> VoxelGrid:
    """Vector-Jacobian product of :func:`render` with ``upstream``, w.r.t. all grid logits.

    Returned as a :class:`VoxelGrid` holding the gradient arrays.
    """
    _check(size, samples_per_ray)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (3, size, size):
        raise ValueError(f"upstream must have shape (3, {size}, {size}), got {upstream.shape}")
    k = backend or kernels
    origins, direction = view.rays(size)
    g_density, g_color = k.render_rays_backward(
        np.ascontiguousarray(grid.density()), np.ascontiguousarray(grid.color()),
        origins, direction, samples_per_ray, HALF_LENGTH, _bg(background),
        np.ascontiguousarray(upstream.reshape(3, -1).T),
    )
    col = grid.color()
    return VoxelGrid(g_density * expit(grid.density_logits), g_color * col * (1.0 - col))


def ray_weights(grid: VoxelGrid, view: CameraView, size: int, samples_per_ray: int = 32):
    """Per-pixel compositing weights (size², samples) and final transmittance (size²,)."""
    origins, direction = view.rays(size)
    return _fallback.ray_weights(grid.density(), grid.color(), origins, direction, samples_per_ray, HALF_LENGTH)


def sample_orthogonal_views(rng: np.random.Generator, elevation: float = 10.0, frame: float = 1.0):
    """Four views 90° apart in azimuth from a uniformly random base azimuth."""
    base = rng.uniform(0.0, 360.0)
    return [CameraView((base + 90.0 * k) % 360.0, elevation, frame) for k in range(4)]


__all__ = [
    "BACKEND", "BACKGROUND", "CameraView", "VoxelGrid", "kernels", "ray_weights", "render",
    "render_grad", "sample_orthogonal_views", "softplus",
]
