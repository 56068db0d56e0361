# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-marching kernels (one ray at a time, fixed accumulation order)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, floor, fabs

cnp.import_array()


cdef inline bint _locate(double px, double py, double pz, int D,
                         Py_ssize_t* cidx, double* cw) noexcept nogil:
    """Fill the 8 trilinear corner indices/weights; False when the point is outside the cube."""
    cdef double g[3]
    cdef double f[3]
    cdef Py_ssize_t lo[3]
    cdef Py_ssize_t hi[3]
    cdef double p[3]
    cdef int a, dz, dy, dx, n
    cdef double wz, wy, wx
    cdef Py_ssize_t kz, ky, kx
    p[0] = px
    p[1] = py
    p[2] = pz
    if fabs(px) > 1.0 or fabs(py) > 1.0 or fabs(pz) > 1.0:
        return False
    for a in range(3):
        g[a] = (p[a] + 1.0) * 0.5 * D - 0.5
        if g[a] < 0.0:
            g[a] = 0.0
        elif g[a] > D - 1.0:
            g[a] = D - 1.0
        lo[a] = <Py_ssize_t>floor(g[a])
        if lo[a] > D - 2:
            lo[a] = D - 2
        if lo[a] < 0:
            lo[a] = 0
        f[a] = g[a] - lo[a]
        hi[a] = lo[a] + 1
        if hi[a] > D - 1:
            hi[a] = D - 1
    n = 0
    for dz in range(2):
        if dz:
            kz = hi[2]
            wz = f[2]
        else:
            kz = lo[2]
            wz = 1.0 - f[2]
        for dy in range(2):
            if dy:
                ky = hi[1]
                wy = f[1]
            else:
                ky = lo[1]
                wy = 1.0 - f[1]
            for dx in range(2):
                if dx:
                    kx = hi[0]
                    wx = f[0]
                else:
                    kx = lo[0]
                    wx = 1.0 - f[0]
                cidx[n] = (kz * D + ky) * D + kx
                cw[n] = wz * wy * wx
                n += 1
    return True


def render_rays(double[:, :, ::1] density, double[:, :, :, ::1] color,
                double[:, ::1] origins, double[::1] direction,
                int n_samples, double half_length, double[::1] background):
    cdef int D = density.shape[0]
    cdef Py_ssize_t P = origins.shape[0]
    cdef double[::1] dens = np.asarray(density).reshape(-1)
    cdef double[:, ::1] col = np.asarray(color).reshape(3, -1)
    out_arr = np.empty((P, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double step = 2.0 * half_length / n_samples
    cdef Py_ssize_t p, s, c, r
    cdef Py_ssize_t cidx[8]
    cdef double cw[8]
    cdef double trans, sig, alpha, w, t, gch
    cdef double acc[3]
    with nogil:
        for p in range(P):
            trans = 1.0
            acc[0] = 0.0
            acc[1] = 0.0
            acc[2] = 0.0
            for s in range(n_samples):
                t = (s + 0.5) * step
                if not _locate(origins[p, 0] + t * direction[0], origins[p, 1] + t * direction[1],
                               origins[p, 2] + t * direction[2], D, cidx, cw):
                    continue
                sig = 0.0
                for c in range(8):
                    sig = sig + cw[c] * dens[cidx[c]]
                alpha = -expm1(-sig * step)
                w = trans * alpha
                for r in range(3):
                    gch = 0.0
                    for c in range(8):
                        gch = gch + cw[c] * col[r, cidx[c]]
                    acc[r] += w * gch
                trans = trans * exp(-sig * step)
            for r in range(3):
                out[p, r] = acc[r] + trans * background[r]
    return out_arr


def render_rays_backward(double[:, :, ::1] density, double[:, :, :, ::1] color,
                         double[:, ::1] origins, double[::1] direction,
                         int n_samples, double half_length, double[::1] background,
                         double[:, ::1] upstream):
    cdef int D = density.shape[0]
    cdef Py_ssize_t P = origins.shape[0]
    cdef Py_ssize_t n_vox = <Py_ssize_t>D * D * D
    cdef double[::1] dens = np.asarray(density).reshape(-1)
    cdef double[:, ::1] col = np.asarray(color).reshape(3, -1)
    gd_arr = np.zeros(n_vox, dtype=np.float64)
    gc_arr = np.zeros((3, n_vox), dtype=np.float64)
    cdef double[::1] gd = gd_arr
    cdef double[:, ::1] gc = gc_arr
    cdef double step = 2.0 * half_length / n_samples
    # per-ray scratch: corner indices/weights, weights, transmittance after sample, c.g
    idx_arr = np.zeros((n_samples, 8), dtype=np.intp)
    cw_arr = np.zeros((n_samples, 8), dtype=np.float64)
    sc_arr = np.zeros((n_samples, 3), dtype=np.float64)
    cdef Py_ssize_t[:, ::1] sidx = idx_arr
    cdef double[:, ::1] scw = cw_arr
    cdef double[:, ::1] sv = sc_arr
    valid_arr = np.zeros(n_samples, dtype=np.uint8)
    cdef unsigned char[::1] valid = valid_arr
    cdef Py_ssize_t p, s, c, r
    cdef double trans, sig, alpha, w, t, cg, tail, dsig, gch
    cdef double bg_dot
    with nogil:
        for p in range(P):
            trans = 1.0
            for s in range(n_samples):
                t = (s + 0.5) * step
                valid[s] = _locate(origins[p, 0] + t * direction[0], origins[p, 1] + t * direction[1],
                                   origins[p, 2] + t * direction[2], D, &sidx[s, 0], &scw[s, 0])
                if not valid[s]:
                    continue
                sig = 0.0
                for c in range(8):
                    sig = sig + scw[s, c] * dens[sidx[s, c]]
                alpha = -expm1(-sig * step)
                w = trans * alpha
                cg = 0.0
                for r in range(3):
                    gch = 0.0
                    for c in range(8):
                        gch = gch + scw[s, c] * col[r, sidx[s, c]]
                    cg = cg + gch * upstream[p, r]
                trans = trans * exp(-sig * step)
                sv[s, 0] = w
                sv[s, 1] = trans
                sv[s, 2] = cg
            bg_dot = 0.0
            for r in range(3):
                bg_dot = bg_dot + upstream[p, r] * background[r]
            tail = trans * bg_dot
            s = n_samples - 1
            while s >= 0:
                if valid[s]:
                    w = sv[s, 0]
                    dsig = step * (sv[s, 1] * sv[s, 2] - tail)
                    for c in range(8):
                        gd[sidx[s, c]] += scw[s, c] * dsig
                        for r in range(3):
                            gc[r, sidx[s, c]] += scw[s, c] * w * upstream[p, r]
                    tail = tail + w * sv[s, 2]
                s -= 1
    return gd_arr.reshape(D, D, D), gc_arr.reshape(3, D, D, D)
