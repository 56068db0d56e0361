"""Vectorized numpy implementation of the ray-marching kernels.

Same contract as the compiled ``_core`` extension; selected at import when the
extension is unavailable or ``DISTILL_PURE_PYTHON`` is set.
"""

import numpy as np


def _samples(D, origins, direction, n_samples, half_length):
    step = 2.0 * half_length / n_samples
    ts = (np.arange(n_samples) + 0.5) * step
    pts = origins[:, None, :] + ts[None, :, None] * direction[None, None, :]
    inside = np.all(np.abs(pts) <= 1.0, axis=-1)
    g = np.clip((pts + 1.0) * 0.5 * D - 0.5, 0.0, D - 1.0)
    lo = np.clip(np.floor(g), 0, max(D - 2, 0)).astype(np.intp)
    f = g - lo
    hi = np.minimum(lo + 1, D - 1)
    idx = []
    wts = []
    for dz in (0, 1):
        kz, wz = (hi[..., 2], f[..., 2]) if dz else (lo[..., 2], 1.0 - f[..., 2])
        for dy in (0, 1):
            ky, wy = (hi[..., 1], f[..., 1]) if dy else (lo[..., 1], 1.0 - f[..., 1])
            for dx in (0, 1):
                kx, wx = (hi[..., 0], f[..., 0]) if dx else (lo[..., 0], 1.0 - f[..., 0])
                idx.append((kz * D + ky) * D + kx)
                wts.append(wz * wy * wx * inside)
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1), step


def _composite(density, color, origins, direction, n_samples, half_length):
    D = density.shape[0]
    idx, wts, step = _samples(D, origins, direction, n_samples, half_length)
    sig = np.einsum("psc,psc->ps", density.reshape(-1)[idx], wts)
    col = np.einsum("kpsc,psc->psk", color.reshape(3, -1)[:, idx], wts)
    tau = sig * step
    alpha = -np.expm1(-tau)
    trans = np.exp(-np.concatenate([np.zeros((len(origins), 1)), np.cumsum(tau, axis=1)], axis=1))
    return idx, wts, step, alpha, trans, col


def ray_weights(density, color, origins, direction, n_samples, half_length):
    """Per-sample compositing weights ``T_i alpha_i`` (P×S) and final transmittance (P,)."""
    _, _, _, alpha, trans, _ = _composite(density, color, origins, direction, n_samples, half_length)
    return trans[:, :-1] * alpha, trans[:, -1]


def render_rays(density, color, origins, direction, n_samples, half_length, background):
    _, _, _, alpha, trans, col = _composite(density, color, origins, direction, n_samples, half_length)
    w = trans[:, :-1] * alpha
    return np.einsum("ps,psk->pk", w, col) + trans[:, -1:] * background[None, :]


def render_rays_backward(density, color, origins, direction, n_samples, half_length, background, upstream):
    D = density.shape[0]
    idx, wts, step, alpha, trans, col = _composite(density, color, origins, direction, n_samples, half_length)
    w = trans[:, :-1] * alpha
    cg = np.einsum("psk,pk->ps", col, upstream)
    wc = w * cg
    # sum_{j>i} w_j (c_j . g) + T_final (bg . g)
    tail = np.cumsum(wc[:, ::-1], axis=1)[:, ::-1] - wc + (trans[:, -1] * (upstream @ background))[:, None]
    d_sigma = step * (trans[:, 1:] * cg - tail)
    n = D**3
    flat_idx = idx.reshape(-1)
    g_density = np.bincount(flat_idx, weights=(wts * d_sigma[..., None]).reshape(-1), minlength=n)
    g_color = np.empty((3, n))
    for k in range(3):
        dc = w * upstream[:, None, k]
        g_color[k] = np.bincount(flat_idx, weights=(wts * dc[..., None]).reshape(-1), minlength=n)
    return g_density.reshape(D, D, D), g_color.reshape(3, D, D, D)
