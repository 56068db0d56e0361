"""Slow, independent reference computations used by the self-test and the test suite."""

from __future__ import annotations

import numpy as np


def brute_dft2(image: np.ndarray) -> np.ndarray:
    """Direct O(N⁴) unitary 2D DFT with DC at ``(H//2, W//2)``; no FFT involved."""
    image = np.asarray(image, dtype=np.complex128)
    H, W = image.shape
    out = np.zeros((H, W), dtype=np.complex128)
    for ku in range(H):
        for kv in range(W):
            u, v = ku - H // 2, kv - W // 2
            acc = 0j
            for y in range(H):
                for x in range(W):
                    acc += image[y, x] * np.exp(-2j * np.pi * (u * y / H + v * x / W))
            out[ku, kv] = acc / np.sqrt(H * W)
    return out


def scale_channels_loop(x: np.ndarray, b: float) -> np.ndarray:
    out = np.array(x, dtype=np.float64, copy=True)
    C = out.shape[0]
    for i in range(C):
        if i < C / 2:
            for y in range(out.shape[1]):
                for xx in range(out.shape[2]):
                    out[i, y, xx] = x[i, y, xx] * b
    return out


def central_diff(f, x: np.ndarray, h: float = 1e-4, indices=None) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` along the given coordinates."""
    x = np.asarray(x, dtype=np.float64)
    indices = range(x.size) if indices is None else indices
    out = np.zeros(x.size)
    for i in indices:
        e = np.zeros(x.size)
        e[i] = h
        out[i] = (f((x.ravel() + e).reshape(x.shape)) - f((x.ravel() - e).reshape(x.shape))) / (2 * h)
    return out.reshape(x.shape)


def composite_by_hand(sigmas, colors, delta, background):
    """Emission-absorption sum along one ray, evaluated term by term."""
    trans = 1.0
    pixel = np.zeros(3)
    for s, c in zip(sigmas, colors):
        alpha = 1.0 - np.exp(-s * delta)
        pixel = pixel + trans * alpha * np.asarray(c, dtype=np.float64)
        trans = trans * (1.0 - alpha)
    return pixel + trans * np.asarray(background, dtype=np.float64)


def laplacian_loop(dens: np.ndarray) -> np.ndarray:
    """6-neighbour Laplacian with edge replication, one voxel at a time."""
    D = dens.shape[0]
    out = np.zeros_like(dens)
    for z in range(D):
        for y in range(D):
            for x in range(D):
                acc = -6.0 * dens[z, y, x]
                for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    zz = min(max(z + dz, 0), D - 1)
                    yy = min(max(y + dy, 0), D - 1)
                    xx = min(max(x + dx, 0), D - 1)
                    acc += dens[zz, yy, xx]
                out[z, y, x] = acc
    return out


def snis_posterior_eps(z_t, alpha: float, sigma: float, prior_samples: np.ndarray, direction: np.ndarray):
    """Self-normalized importance estimate of E[direction . eps | z_t].

    ``prior_samples`` are clean images drawn from the prior; each is weighted
    by the likelihood N(z_t; alpha x, sigma^2 I). Returns the estimate and its
    delta-method standard error.
    """
    z = np.asarray(z_t, dtype=np.float64).ravel()
    x = prior_samples.reshape(len(prior_samples), -1)
    logw = -0.5 * np.sum((z - alpha * x) ** 2, axis=1) / sigma**2
    w = np.exp(logw - logw.max())
    w /= w.sum()
    f = ((z - alpha * x) / sigma) @ np.asarray(direction, dtype=np.float64).ravel()
    est = float(w @ f)
    se = float(np.sqrt(np.sum(w**2 * (f - est) ** 2)))
    return est, se
