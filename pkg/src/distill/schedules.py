"""Time-varying quantities of a distillation run.

Every schedule here is a pure function of its inputs. The only stateful
object is the ``numpy.random.Generator`` handed to :func:`sample_timestep`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .freeu import FreeUParams

# FreeU factors (b1, s1, b2, s2) at the two ends of the timestep ramp.
FREEU_AT_LARGE_T = (0.6, 1.1, 0.4, 1.8)
FREEU_AT_SMALL_T = (1.4, 0.9, 1.6, 0.2)
FREEU_T_LARGE = 980
FREEU_T_SMALL = 20

CFG_START = 100.0
CFG_END = 10.0
CFG_STATIC = 50.0

ANNEAL_START = (0.98, 0.98)
ANNEAL_END = (0.02, 0.5)
ANNEAL_HORIZON = 8000


@dataclass(frozen=True)
class ScheduleSpec:
    """A linear ramp from ``value_start`` at ``domain_start`` to ``value_end`` at ``domain_end``."""

    domain_start: float
    domain_end: float
    value_start: float
    value_end: float
    clamp: bool = True

    def __post_init__(self):
        if self.domain_start == self.domain_end:
            raise ValueError("ScheduleSpec domain is empty (domain_start == domain_end)")
        for name in ("domain_start", "domain_end", "value_start", "value_end"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ScheduleSpec.{name} must be finite")

    def __call__(self, x: float) -> float:
        return eval_linear(self, x)


@dataclass(frozen=True)
class AnnealRange:
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (0.0 < self.t_min <= self.t_max <= 1.0):
            raise ValueError(f"invalid anneal range [{self.t_min}, {self.t_max}]")


def eval_linear(spec: ScheduleSpec, x: float) -> float:
    """Evaluate a linear ramp at ``x``, clamping to the endpoints if requested.

    Endpoints are returned exactly (no rounding through the interpolation).
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"schedule argument must be finite, got {x}")
    if x == spec.domain_start:
        return float(spec.value_start)
    if x == spec.domain_end:
        return float(spec.value_end)
    lo, hi = sorted((spec.domain_start, spec.domain_end))
    if spec.clamp and not lo <= x <= hi:
        return float(spec.value_start if abs(x - spec.domain_start) < abs(x - spec.domain_end) else spec.value_end)
    frac = (x - spec.domain_start) / (spec.domain_end - spec.domain_start)
    return float(spec.value_start + (spec.value_end - spec.value_start) * frac)


def freeu_schedule(
    t: int,
    r_threshold: float = 1.0,
    at_large_t: tuple[float, float, float, float] = FREEU_AT_LARGE_T,
    at_small_t: tuple[float, float, float, float] = FREEU_AT_SMALL_T,
    t_large: float = FREEU_T_LARGE,
    t_small: float = FREEU_T_SMALL,
) -> FreeUParams:
    """FreeU factors for diffusion timestep ``t``.

    Backbone factors sit below 1 at large ``t`` (coarse geometry) and above 1
    at small ``t`` (texture detail); skip factors mirror them about 1.
    ``r_threshold`` is carried through unscheduled.
    """
    b1, s1, b2, s2 = (
        eval_linear(ScheduleSpec(t_large, t_small, hi, lo), t)
        for hi, lo in zip(at_large_t, at_small_t)
    )
    return FreeUParams(b1, s1, b2, s2, r_threshold)


def cfg_schedule(
    iter: int,
    total_iters: int,
    start: float = CFG_START,
    end: float = CFG_END,
) -> float:
    """Guidance weight at optimization iteration ``iter`` (1-based)."""
    if total_iters < 2:
        raise ValueError(f"cfg_schedule needs total_iters >= 2, got {total_iters}")
    return eval_linear(ScheduleSpec(1, total_iters, start, end), iter)


def anneal_timestep_range(
    iter: int,
    horizon: int = ANNEAL_HORIZON,
    start: tuple[float, float] = ANNEAL_START,
    end: tuple[float, float] = ANNEAL_END,
) -> AnnealRange:
    """Normalized timestep window at iteration ``iter`` (0-based).

    The window widens linearly over ``horizon`` iterations and then stays fixed.
    """
    if horizon <= 0:
        return AnnealRange(*end)
    t_min = eval_linear(ScheduleSpec(0, horizon, start[0], end[0]), iter)
    t_max = eval_linear(ScheduleSpec(0, horizon, start[1], end[1]), iter)
    return AnnealRange(t_min, t_max)


def sample_timestep(range: AnnealRange, rng: np.random.Generator, T: int = 1000) -> int:
    """Draw a discrete timestep index uniformly from the normalized window."""
    if T < 2:
        raise ValueError(f"schedule length must be >= 2, got {T}")
    u = rng.uniform(range.t_min, range.t_max)
    return int(min(max(round(u * (T - 1)), 0), T - 1))


def resolution_schedule(iter: int, switch: int, low: int, high: int) -> int:
    """Render size: ``low`` before iteration ``switch`` (0-based), ``high`` from then on."""
    if low <= 0 or high <= 0:
        raise ValueError(f"resolutions must be positive, got ({low}, {high})")
    return low if iter < switch else high
