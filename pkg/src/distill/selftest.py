"""Fast oracle checks runnable from an installed package (``distill selftest``)."""

from __future__ import annotations

import time

import numpy as np

from . import oracles, schedules
from .config import SDSConfig
from .freeu import fft2, ifft2, scale_backbone, scale_skip_lowfreq
from .guidance import ScorePair, cfg_combine, cfg_negative, rescale_cfg
from .prior import (
    PROMPT, Component, GaussianMixturePrior, analytic_eps, forward_diffuse, make_cosine_schedule,
)
from .renderer import BACKEND, CameraView, VoxelGrid, _fallback, ray_weights, render, render_grad


def check_schedule_constants():
    ok = schedules.freeu_schedule(980).as_tuple() == (0.6, 1.1, 0.4, 1.8)
    ok &= schedules.freeu_schedule(20).as_tuple() == (1.4, 0.9, 1.6, 0.2)
    ok &= np.allclose(schedules.freeu_schedule(500).as_tuple(), 1.0, atol=1e-12, rtol=0)
    ok &= schedules.cfg_schedule(1, 10000) == 100 and schedules.cfg_schedule(10000, 10000) == 10
    a0, a1 = schedules.anneal_timestep_range(0), schedules.anneal_timestep_range(8000)
    return ok and (a0.t_min, a0.t_max) == (0.98, 0.98) and (a1.t_min, a1.t_max) == (0.02, 0.5)


def check_guidance_algebra():
    rng = np.random.default_rng(0)
    for omega in (0.0, 1.0, 7.5, 49.0, 99.0):
        pair = ScorePair(rng.normal(size=(3, 8, 8)), rng.normal(size=(3, 8, 8)))
        if not np.allclose(cfg_negative(pair, 1 + omega), cfg_combine(pair, omega), atol=1e-12, rtol=0):
            return False
    return True


def check_rescale():
    rng = np.random.default_rng(1)
    pos, cfg = rng.normal(size=(3, 8, 8)), 4.0 * rng.normal(size=(3, 8, 8))
    out = rescale_cfg(pos, cfg, 1.0)
    return np.allclose(out.std(axis=(1, 2)), pos.std(axis=(1, 2)), rtol=1e-9, atol=0)


def check_fft():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    ok = np.allclose(fft2(x), oracles.brute_dft2(x), atol=1e-9, rtol=0)
    return ok and np.allclose(ifft2(fft2(x)), x, atol=1e-9, rtol=0)


def check_freeu_windows():
    const = np.full((2, 8, 8), 3.0)
    checker = np.tile(np.array([[1.0, -1.0], [-1.0, 1.0]]), (2, 4, 4))
    ok = np.allclose(scale_skip_lowfreq(const, 0.5, 1), 1.5, atol=1e-9, rtol=0)
    ok &= np.allclose(scale_skip_lowfreq(checker, 0.5, 1), checker, atol=1e-9, rtol=0)
    x = rng_feature()
    return ok and np.array_equal(scale_backbone(x, 1.7)[2:], x[2:])


def rng_feature():
    return np.random.default_rng(3).normal(size=(4, 8, 8))


def check_render_gradient():
    rng = np.random.default_rng(4)
    D = 4
    grid = VoxelGrid(rng.normal(size=(D, D, D)), rng.normal(size=(3, D, D, D)))
    view = CameraView(37.0, 20.0)
    up = rng.normal(size=(3, 5, 5))
    g = render_grad(grid, view, 5, 8, up).params()
    f = lambda p: float(np.sum(render(VoxelGrid.from_params(D, p), view, 5, 8) * up))
    idx = rng.choice(g.size, 24, replace=False)
    fd = oracles.central_diff(f, grid.params(), 1e-4, idx)[idx]
    return np.allclose(g[idx], fd, rtol=1e-4, atol=1e-9)


def check_compositing_weights():
    rng = np.random.default_rng(5)
    grid = VoxelGrid(rng.normal(size=(4, 4, 4)), rng.normal(size=(3, 4, 4, 4)))
    w, t_final = ray_weights(grid, CameraView(15.0, 10.0), 6, 16)
    return np.allclose(w.sum(axis=1) + t_final, 1.0, atol=1e-9, rtol=0)


def check_backends_agree():
    from . import renderer

    rng = np.random.default_rng(6)
    grid = VoxelGrid(rng.normal(size=(5, 5, 5)), rng.normal(size=(3, 5, 5, 5)))
    view = CameraView(200.0, 10.0)
    a = render(grid, view, 8, 16, backend=renderer.kernels)
    b = render(grid, view, 8, 16, backend=_fallback)
    return np.allclose(a, b, atol=1e-12, rtol=0)


def check_analytic_score():
    rng = np.random.default_rng(7)
    sched = make_cosine_schedule(1000)
    comps = [Component("disc", 0.5, (0.9, 0.2, 0.2), std=0.2, weight=0.3),
             Component("constant", color=(0.4, 0.5, 0.6), std=0.3, weight=0.7)]
    prior = GaussianMixturePrior({"prompt": comps})
    t = 600
    z = forward_diffuse(prior.sample(PROMPT, 1, 4, rng)[0], t, rng.normal(size=(3, 4, 4)), sched)
    eps = analytic_eps(z, t, PROMPT, prior, sched)
    d = rng.normal(size=z.shape)
    h = 1e-4
    f = lambda zz: -sched.sigma[t] * prior.log_density(zz, t, PROMPT, sched)
    fd = (f(z + h * d) - f(z - h * d)) / (2 * h)
    return np.isclose(fd, np.sum(eps * d), rtol=1e-4)


def check_fixed_point():
    from .sds import Streams, sds_update

    cfg = SDSConfig().with_overrides({
        "prior.prompt": "constant color=0.5 std=0", "guidance.mode": "none",
        "grid.resolution": "4", "render.res_low": "8", "render.res_high": "8", "run.total_iters": "10",
    })
    grad, _ = sds_update(VoxelGrid.initial(4), 1, cfg, Streams.from_seed(0))
    return float(np.max(np.abs(grad))) <= 1e-9


CHECKS = [
    ("schedule constants", check_schedule_constants),
    ("guidance algebra", check_guidance_algebra),
    ("rescale-cfg std", check_rescale),
    ("fft vs brute-force dft", check_fft),
    ("freeu windows and half-channel law", check_freeu_windows),
    ("render gradient vs finite differences", check_render_gradient),
    ("compositing weights sum to one", check_compositing_weights),
    (f"{BACKEND} kernel agrees with numpy fallback", check_backends_agree),
    ("analytic score vs finite differences", check_analytic_score),
    ("sds zero-residual fixed point", check_fixed_point),
]


def run_all(verbose: bool = True) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        start = time.perf_counter()
        try:
            ok = bool(fn())
        except Exception as exc:  # report, keep going
            ok = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        all_ok &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}  [{time.perf_counter() - start:.2f}s]")
    return all_ok
