"""Diffusion priors in pixel space.

The analytic prior is a Gaussian mixture over images whose noised marginal is
known in closed form, so its noise prediction is exact. It doubles as the
reference the trained :mod:`distill.unet` denoiser is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

CONDITION_KINDS = ("prompt", "negative", "unconditioned")


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance-preserving schedule: ``z_t = alpha[t] x + sigma[t] eps``."""

    alpha: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.alpha)

    def check(self, tol: float = 1e-9) -> None:
        if not np.all(np.abs(self.alpha**2 + self.sigma**2 - 1.0) <= tol):
            raise ValueError("schedule is not variance preserving")
        if np.any(np.diff(self.alpha) > 0):
            raise ValueError("alpha must be nonincreasing in t")


SIGMA_MIN = 1e-4
ALPHA_MIN = 1e-2


def make_cosine_schedule(T: int = 1000) -> NoiseSchedule:
    """Cosine schedule ``alpha = cos(theta)``, ``sigma = sin(theta)`` with theta linear in t.

    theta runs from asin(1e-4) at t=0 to acos(1e-2) at t=T-1, so both ends
    stay strictly inside (0, pi/2) and the noise prediction is always defined.
    """
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    theta = np.linspace(math.asin(SIGMA_MIN), math.acos(ALPHA_MIN), T)
    return NoiseSchedule(alpha=np.cos(theta), sigma=np.sin(theta))


def forward_diffuse(x: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    x = np.asarray(x)
    eps = np.asarray(eps)
    if x.shape != eps.shape:
        raise ValueError(f"image/noise shape mismatch: {x.shape} vs {eps.shape}")
    return sched.alpha[t] * x + sched.sigma[t] * eps


@dataclass(frozen=True)
class Condition:
    kind: str = "prompt"
    id: int = 0

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown condition kind {self.kind!r}")

    @property
    def key(self) -> str:
        return self.kind if self.kind != "prompt" or self.id == 0 else f"prompt{self.id}"


PROMPT = Condition("prompt")
NEGATIVE = Condition("negative")
UNCONDITIONED = Condition("unconditioned")


# -- mixture components -------------------------------------------------------

SHAPES = ("constant", "disc")
_SUPERSAMPLE = 4


@lru_cache(maxsize=256)
def _shape_image(shape: str, radius: float, color: tuple, background: tuple, size: int) -> np.ndarray:
    if shape == "constant":
        img = np.ascontiguousarray(np.broadcast_to(np.asarray(color, dtype=np.float64)[:, None, None],
                                                   (3, size, size)))
        img.flags.writeable = False  # shared through the cache
        return img
    # disc: area coverage by supersampling, pixel grid spans [-1, 1] like the renderer frame
    n = size * _SUPERSAMPLE
    c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    inside = (c[:, None] ** 2 + c[None, :] ** 2) <= radius**2
    cover = inside.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))
    fg = np.asarray(color, dtype=np.float64)[:, None, None]
    bg = np.asarray(background, dtype=np.float64)[:, None, None]
    img = cover * fg + (1.0 - cover) * bg
    img.flags.writeable = False
    return img


@dataclass(frozen=True)
class Component:
    """One isotropic Gaussian: mean image drawn procedurally, std ``std``, mixture weight ``weight``."""

    shape: str = "disc"
    radius: float = 0.5
    color: tuple = (0.5, 0.5, 0.5)
    background: tuple = (0.5, 0.5, 0.5)
    std: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown component shape {self.shape!r}; expected one of {SHAPES}")
        if self.std < 0 or not math.isfinite(self.std):
            raise ValueError("component std must be finite and >= 0")
        if not self.weight > 0:
            raise ValueError("component weight must be > 0")

    def mean(self, size: int) -> np.ndarray:
        return _shape_image(self.shape, float(self.radius), tuple(self.color), tuple(self.background), int(size))

    def describe(self) -> str:
        parts = [self.shape]
        if self.shape == "disc":
            parts += [f"radius={self.radius!r}", "color=" + ",".join(map(repr, self.color)),
                      "background=" + ",".join(map(repr, self.background))]
        else:
            parts.append("color=" + ",".join(map(repr, self.color)))
        parts += [f"std={self.std!r}", f"weight={self.weight!r}"]
        return " ".join(parts)


def parse_components(text: str) -> list[Component]:
    """Parse ``"disc radius=0.5 color=1,0,0 std=0.05 weight=0.5; constant color=0.5,0.5,0.5"``."""
    comps = []
    for chunk in text.split(";"):
        tokens = chunk.split()
        if not tokens:
            continue
        kwargs: dict = {"shape": tokens[0]}
        for tok in tokens[1:]:
            key, sep, val = tok.partition("=")
            if not sep:
                raise ValueError(f"malformed component token {tok!r}")
            if key in ("color", "background"):
                vals = tuple(float(v) for v in val.split(","))
                if len(vals) == 1:
                    vals = vals * 3
                if len(vals) != 3:
                    raise ValueError(f"{key} needs 1 or 3 values, got {val!r}")
                kwargs[key] = vals
            elif key in ("radius", "std", "weight"):
                kwargs[key] = float(val)
            else:
                raise ValueError(f"unknown component key {key!r}")
        comps.append(Component(**kwargs))
    if not comps:
        raise ValueError("component list is empty")
    return comps


@dataclass
class GaussianMixturePrior:
    """Per-condition isotropic Gaussian mixtures over 3×H×W images."""

    components: dict[str, list[Component]] = field(default_factory=dict)

    def __post_init__(self):
        for key, comps in self.components.items():
            if not comps:
                raise ValueError(f"condition {key!r} has no components")

    def _get(self, cond: Condition) -> list[Component]:
        try:
            return self.components[cond.key]
        except KeyError:
            raise KeyError(f"condition {cond.key!r} not present in prior") from None

    def _params(self, cond: Condition, size: int):
        comps = self._get(cond)
        means = np.stack([c.mean(size) for c in comps])
        stds = np.array([c.std for c in comps])
        w = np.array([c.weight for c in comps])
        return means, stds, w / w.sum()

    def sample(self, cond: Condition, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
        means, stds, w = self._params(cond, size)
        k = rng.choice(len(w), size=n, p=w)
        return means[k] + stds[k, None, None, None] * rng.standard_normal((n, *means.shape[1:]))

    def log_density(self, z_t, t: int, cond: Condition, sched: NoiseSchedule) -> np.ndarray:
        """log p(z_t | c) of the noised mixture, batched over leading axes."""
        logp, _ = self._log_terms(np.asarray(z_t, dtype=np.float64), t, cond, sched)
        return logsumexp(logp, axis=-1)

    def _log_terms(self, z, t, cond, sched):
        size = z.shape[-1]
        means, stds, w = self._params(cond, size)
        a, s = sched.alpha[t], sched.sigma[t]
        var = a**2 * stds**2 + s**2
        if np.any(var <= 0):
            raise ValueError(f"noised component variance is zero at t={t}")
        n = means[0].size
        flat = z.reshape(-1, n)
        diff = flat[:, None, :] - a * means.reshape(1, len(w), n)
        sq = np.einsum("bkn,bkn->bk", diff, diff)
        logp = np.log(w) - 0.5 * sq / var - 0.5 * n * np.log(2 * np.pi * var)
        return logp.reshape(*z.shape[:-3], len(w)), (diff, var)


def analytic_eps(z_t, t: int, cond: Condition, prior: GaussianMixturePrior, sched: NoiseSchedule) -> np.ndarray:
    """Exact noise prediction ``-sigma_t * grad log p(z_t | c)`` for the mixture prior."""
    z = np.asarray(z_t, dtype=np.float64)
    logp, (diff, var) = prior._log_terms(z, t, cond, sched)
    logp = logp.reshape(-1, len(var))
    resp = np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))
    # -grad log p = sum_k r_k (z - alpha mu_k) / var_k
    neg_score = np.einsum("bk,bkn->bn", resp / var, diff)
    return sched.sigma[t] * neg_score.reshape(z.shape)
