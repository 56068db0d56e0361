"""Score distillation: the per-iteration update, AdamW, the optimization loop and quality proxies."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import schedules
from .config import SDSConfig
from .freeu import FreeUParams, lowfreq_mask
from .guidance import ScorePair, cfg_combine, cfg_negative, rescale_cfg
from .prior import (
    NEGATIVE, PROMPT, UNCONDITIONED, Condition, GaussianMixturePrior, NoiseSchedule,
    analytic_eps, forward_diffuse, make_cosine_schedule, parse_components,
)
from .renderer import CameraView, VoxelGrid, render, render_grad, sample_orthogonal_views

log = logging.getLogger(__name__)

SIZE_TAU = 1.0
METRICS_HEADER = ("iter", "t", "cfg_w", "b1", "s1", "b2", "s2", "phi", "size", "rough", "detail", "gnorm")


class NumericalAbort(RuntimeError):
    """Raised when the optimization produces non-finite values."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


# -- priors -------------------------------------------------------------------


class AnalyticPrior:
    """Exact mixture noise prediction; FreeU factors have no feature maps to act on and are ignored."""

    def __init__(self, mixture: GaussianMixturePrior, sched: NoiseSchedule):
        self.mixture = mixture
        self.sched = sched

    def eps(self, z, t: int, cond: Condition, freeu: FreeUParams | None = None) -> np.ndarray:
        return analytic_eps(z, t, cond, self.mixture, self.sched)


class UNetPrior:
    def __init__(self, net, sched: NoiseSchedule):
        self.net = net
        self.sched = sched

    def eps(self, z, t: int, cond: Condition, freeu: FreeUParams | None = None) -> np.ndarray:
        from .unet import unet_eps

        return unet_eps(z, t, cond, self.net, freeu)


def mixture_from_config(config: SDSConfig) -> GaussianMixturePrior:
    p = config.prior
    return GaussianMixturePrior({
        "prompt": parse_components(p.prompt),
        "negative": parse_components(p.negative),
        "unconditioned": parse_components(p.unconditioned),
    })


def build_prior(config: SDSConfig):
    sched = make_cosine_schedule(config.prior.T)
    mixture = mixture_from_config(config)
    if config.prior.kind == "analytic":
        return AnalyticPrior(mixture, sched)
    from .unet import TinyUNet, load_checkpoint, train_denoiser

    p = config.prior
    net = TinyUNet(base=p.unet_base, seed=p.unet_seed)
    if p.unet_checkpoint:
        load_checkpoint(p.unet_checkpoint, net)
    else:
        rng = np.random.default_rng(p.unet_seed)
        size = config.render.res_low
        dataset = {c: mixture.sample(c, p.unet_dataset_size, size, rng) for c in (PROMPT, NEGATIVE)}
        net, _ = train_denoiser(net, dataset, p.unet_train_steps, rng, sched,
                                batch_size=p.unet_batch_size, lr=p.unet_lr)
    net.eval()
    return UNetPrior(net, sched)


# -- random streams -----------------------------------------------------------


@dataclass
class Streams:
    """Independent generators for timesteps, camera views and diffusion noise."""

    timestep: np.random.Generator
    views: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "Streams":
        ss = np.random.SeedSequence(seed)
        return cls(*(np.random.default_rng(s) for s in ss.spawn(3)))


# -- per-iteration policy -----------------------------------------------------


def guidance_weight(config: SDSConfig, iter: int) -> float:
    g = config.guidance
    if g.mode == "none":
        return 0.0
    if g.schedule == "static":
        return float(g.weight)
    if config.run.total_iters < 2:
        return float(g.start)
    return schedules.cfg_schedule(iter, config.run.total_iters, g.start, g.end)


def freeu_params(config: SDSConfig, t: int) -> FreeUParams:
    f = config.freeu
    if f.mode == "off":
        return FreeUParams(r_threshold=f.r_threshold)
    if f.mode == "static":
        return FreeUParams(f.b1, f.s1, f.b2, f.s2, f.r_threshold)
    return schedules.freeu_schedule(t, f.r_threshold, tuple(f.at_large_t), tuple(f.at_small_t),
                                    f.t_large, f.t_small)


def anneal_range(config: SDSConfig, iter: int) -> schedules.AnnealRange:
    a = config.anneal
    return schedules.anneal_timestep_range(iter - 1, a.horizon, (a.start_min, a.start_max), (a.end_min, a.end_max))


def render_size(config: SDSConfig, iter: int) -> int:
    r = config.render
    return schedules.resolution_schedule(iter - 1, r.res_switch, r.res_low, r.res_high)


def draw_timestep(config: SDSConfig, iter: int, rng: np.random.Generator) -> int:
    return schedules.sample_timestep(anneal_range(config, iter), rng, config.prior.T)


def sds_weight(config: SDSConfig, sched: NoiseSchedule, t: int) -> float:
    base = float(sched.sigma[t]) ** 2 if config.sds.weighting == "sigma_squared" else 1.0
    return config.sds.weight_scale * base


def guided_eps(prior, z, t: int, config: SDSConfig, weight: float, freeu: FreeUParams | None):
    """Prompt prediction combined with its reference under the configured guidance mode."""
    g = config.guidance
    eps_pos = prior.eps(z, t, PROMPT, freeu)
    if g.mode == "none":
        return eps_pos
    if g.mode == "classic":
        out = cfg_combine(ScorePair(eps_pos, prior.eps(z, t, UNCONDITIONED, freeu)), weight)
    else:
        out = cfg_negative(ScorePair(eps_pos, prior.eps(z, t, NEGATIVE, freeu)), weight)
    if g.rescale:
        out = rescale_cfg(eps_pos, out, g.rescale_phi, g.rescale_axes)
    return out


# -- metrics ------------------------------------------------------------------


@dataclass
class MetricsRow:
    iter: int
    t: int
    cfg_w: float
    b1: float
    s1: float
    b2: float
    s2: float
    phi: float
    size: float
    rough: float
    detail: float
    gnorm: float

    def values(self) -> tuple:
        return tuple(getattr(self, k) for k in METRICS_HEADER)


def size_proxy(grid: VoxelGrid, tau: float = SIZE_TAU) -> float:
    """Fraction of voxels whose density exceeds ``tau``."""
    return float(np.mean(grid.density() > tau))


_NEIGHBORS = [(axis, shift) for axis in range(3) for shift in (-1, 1)]


def roughness_proxy(grid: VoxelGrid, tau: float = SIZE_TAU) -> float:
    """Mean |discrete Laplacian| of the density over occupied voxels bordering free space.

    The Laplacian uses edge replication at the grid border; voxels outside the
    grid count as free when deciding what is a boundary voxel.
    """
    dens = grid.density()
    occ = dens > tau
    padded = np.pad(dens, 1, mode="edge")
    occ_p = np.pad(occ, 1, mode="constant", constant_values=False)
    inner = (slice(1, -1),) * 3
    lap = -6.0 * dens
    boundary = np.zeros_like(occ)
    for axis, shift in _NEIGHBORS:
        lap = lap + np.roll(padded, shift, axis=axis)[inner]
        boundary |= ~np.roll(occ_p, shift, axis=axis)[inner]
    boundary &= occ
    if not boundary.any():
        return 0.0
    return float(np.mean(np.abs(lap[boundary])))


def detail_proxy(images, r_threshold: float = 1.0) -> float:
    """Mean fraction of per-channel spectral energy outside the low-frequency window."""
    fracs = []
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        spec = np.fft.fftshift(np.fft.fft2(img, norm="ortho"), axes=(-2, -1))
        energy = np.abs(spec) ** 2
        mask = lowfreq_mask(img.shape[-2], img.shape[-1], r_threshold)
        total = energy.sum(axis=(-2, -1))
        outside = np.where(mask, 0.0, energy).sum(axis=(-2, -1))
        fracs.extend(np.where(total > 0, outside / np.where(total > 0, total, 1.0), 0.0).ravel())
    return float(np.mean(fracs)) if fracs else 0.0


# -- SDS update ---------------------------------------------------------------


def sds_update(grid: VoxelGrid, iter: int, config: SDSConfig, rng: Streams, prior=None,
               with_metrics: bool = True):
    """One SDS gradient over all grid logits, plus the metrics of this iteration.

    Returns ``(gradient_vector, MetricsRow | None)``; the gradient follows
    :meth:`VoxelGrid.params` layout. The prior prediction is a constant: no
    gradient flows through it.
    """
    prior = prior or build_prior(config)
    sched = prior.sched
    r = config.render
    views = sample_orthogonal_views(rng.views, r.elevation, r.frame)
    size = render_size(config, iter)
    images = np.stack([render(grid, v, size, r.samples_per_ray, r.background) for v in views])
    t = draw_timestep(config, iter, rng.timestep)
    eps = rng.noise.standard_normal(images.shape)
    z_t = forward_diffuse(images, t, eps, sched)
    fu = freeu_params(config, t)
    weight = guidance_weight(config, iter)
    eps_hat = guided_eps(prior, z_t, t, config, weight, None if config.freeu.mode == "off" else fu)
    residual = sds_weight(config, sched, t) * (eps_hat - eps)

    grad = np.zeros(grid.params().shape)
    for view, res in zip(views, residual):
        grad += render_grad(grid, view, size, r.samples_per_ray, res, r.background).params()
    if config.sds.view_reduce == "mean":
        grad /= len(views)

    if not np.all(np.isfinite(grad)):
        raise NumericalAbort(
            f"non-finite SDS gradient at iteration {iter}",
            {"iter": iter, "t": t, "cfg_w": weight, "render_size": size,
             "nonfinite_grad": int(np.sum(~np.isfinite(grad))),
             "residual_nonfinite": int(np.sum(~np.isfinite(residual)))},
        )
    row = None
    if with_metrics:
        phi = config.guidance.rescale_phi if config.guidance.rescale and config.guidance.mode != "none" else 0.0
        row = MetricsRow(iter, t, weight, *fu.as_tuple(), phi, size_proxy(grid), roughness_proxy(grid),
                         detail_proxy(images, config.freeu.r_threshold), float(np.linalg.norm(grad)))
    return grad, row


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adamw_step(params: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
               weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """Decoupled-weight-decay Adam update. Returns new ``(params, state)``."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if params.shape != grad.shape:
        raise ValueError(f"param/grad shape mismatch: {params.shape} vs {grad.shape}")
    b1, b2 = betas
    m = np.zeros_like(params) if state.m is None else state.m
    v = np.zeros_like(params) if state.v is None else state.v
    step = state.step + 1
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**step)
    v_hat = v / (1 - b2**step)
    params = params * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, AdamState(step, m, v)


# -- loop ---------------------------------------------------------------------


@dataclass
class RunResult:
    grid: VoxelGrid
    metrics: list[MetricsRow] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


def initial_grid(config: SDSConfig) -> VoxelGrid:
    g = config.grid
    return VoxelGrid.initial(g.resolution, g.init_density, g.init_color)


def snapshot_views(config: SDSConfig, grid: VoxelGrid) -> dict:
    r = config.render
    return {
        az: render(grid, CameraView(az, r.elevation, r.frame), r.res_high, r.samples_per_ray, r.background)
        for az in config.run.snapshot_azimuths
    }


def optimize(config: SDSConfig, prior=None, progress=None) -> RunResult:
    """Run ``total_iters`` SDS + AdamW iterations from the initial grid.

    Metrics are recorded at iteration 1, every ``metrics_every`` iterations and
    at the last one. Snapshots are keyed ``(iter, azimuth)``.
    """
    prior = prior or build_prior(config)
    grid = initial_grid(config)
    result = RunResult(grid)
    n = config.run.total_iters
    if n == 0:
        return result
    streams = Streams.from_seed(config.run.seed)
    o = config.optim
    params = grid.params()
    state = AdamState()
    D = grid.resolution
    for it in range(1, n + 1):
        record = (it - 1) % config.run.metrics_every == 0 or it == n
        grad, row = sds_update(grid, it, config, streams, prior, with_metrics=record)
        params, state = adamw_step(params, grad, state, o.learning_rate, o.weight_decay, (o.beta1, o.beta2), o.eps)
        if not np.all(np.isfinite(params)):
            raise NumericalAbort(f"non-finite grid parameters after iteration {it}", {"iter": it})
        grid = VoxelGrid.from_params(D, params)
        if row is not None:
            result.metrics.append(row)
            if progress:
                progress(row)
        every = config.run.snapshot_every
        if it == n or (every and it % every == 0):
            for az, img in snapshot_views(config, grid).items():
                result.snapshots[(it, az)] = img
    result.grid = grid
    return result


def format_metrics_csv(rows) -> str:
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()))
    return "\n".join(lines) + "\n"
