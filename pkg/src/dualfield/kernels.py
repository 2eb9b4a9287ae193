"""Numba-compiled inner loops for grid interpolation, compositing, and Adam.

These kernels are the only performance-critical code in the package. All of
them run serially with IEEE float semantics (fastmath off), so results are
deterministic and independent of thread count. Math is float64 throughout;
grid features arrive as float32 and are promoted per element, matching the
pure-numpy reference implementations in the tests.

Stencil layout: `base` holds the flattened index of the low corner of each
point's cell in a C-ordered (Nx, Ny, Nz) grid and fx/fy/fz the within-cell
coordinates, so corner (i, j, k) sits at base + i*ny*nz + j*nz + k.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def trilerp_gather(density, color, base, fx, fy, fz, ny, nz):
    """Trilinear interpolation of density (V,) and color (V, 3) features."""
    m = base.shape[0]
    h_sigma = np.empty(m)
    h_c = np.empty((m, 3))
    s_y = nz
    s_x = ny * nz
    for i in range(m):
        b = base[i]
        x1, y1, z1 = fx[i], fy[i], fz[i]
        x0, y0, z0 = 1.0 - x1, 1.0 - y1, 1.0 - z1
        w000 = x0 * y0 * z0
        w001 = x0 * y0 * z1
        w010 = x0 * y1 * z0
        w011 = x0 * y1 * z1
        w100 = x1 * y0 * z0
        w101 = x1 * y0 * z1
        w110 = x1 * y1 * z0
        w111 = x1 * y1 * z1
        i010 = b + s_y
        i100 = b + s_x
        i110 = b + s_x + s_y
        h_sigma[i] = (w000 * density[b] + w001 * density[b + 1]
                      + w010 * density[i010] + w011 * density[i010 + 1]
                      + w100 * density[i100] + w101 * density[i100 + 1]
                      + w110 * density[i110] + w111 * density[i110 + 1])
        for ch in range(3):
            h_c[i, ch] = (w000 * color[b, ch] + w001 * color[b + 1, ch]
                          + w010 * color[i010, ch] + w011 * color[i010 + 1, ch]
                          + w100 * color[i100, ch] + w101 * color[i100 + 1, ch]
                          + w110 * color[i110, ch] + w111 * color[i110 + 1, ch])
    return h_sigma, h_c


@njit(cache=True)
def trilerp_scatter(grad_density, grad_color, base, fx, fy, fz, d_h_sigma, d_h_c, ny, nz):
    """Adjoint of trilerp_gather: accumulate into (V,) / (V, 3) grad arrays."""
    m = base.shape[0]
    s_y = nz
    s_x = ny * nz
    for i in range(m):
        b = base[i]
        x1, y1, z1 = fx[i], fy[i], fz[i]
        x0, y0, z0 = 1.0 - x1, 1.0 - y1, 1.0 - z1
        ds = d_h_sigma[i]
        c0, c1, c2 = d_h_c[i, 0], d_h_c[i, 1], d_h_c[i, 2]
        for k in range(8):
            if k == 0:
                w = x0 * y0 * z0
                idx = b
            elif k == 1:
                w = x0 * y0 * z1
                idx = b + 1
            elif k == 2:
                w = x0 * y1 * z0
                idx = b + s_y
            elif k == 3:
                w = x0 * y1 * z1
                idx = b + s_y + 1
            elif k == 4:
                w = x1 * y0 * z0
                idx = b + s_x
            elif k == 5:
                w = x1 * y0 * z1
                idx = b + s_x + 1
            elif k == 6:
                w = x1 * y1 * z0
                idx = b + s_x + s_y
            else:
                w = x1 * y1 * z1
                idx = b + s_x + s_y + 1
            grad_density[idx] += w * ds
            grad_color[idx, 0] += w * c0
            grad_color[idx, 1] += w * c1
            grad_color[idx, 2] += w * c2


@njit(cache=True)
def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, bc1, bc2, out):
    """One bias-corrected Adam step; updates moments in place, writes out."""
    n = theta.shape[0]
    inv_bc1 = 1.0 / bc1
    inv_bc2 = 1.0 / bc2
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        step = lr * (m[i] * inv_bc1) / (np.sqrt(v[i] * inv_bc2) + eps)
        out[i] = theta[i] - step


@njit(cache=True)
def composite_forward(sigmas, rgbs, deltas, background):
    """Alpha compositing over (B, N) samples; returns color and partials."""
    b, n = sigmas.shape
    color = np.empty((b, 3))
    weights = np.empty((b, n))
    trans = np.empty((b, n))
    alphas = np.empty((b, n))
    residual = np.empty(b)
    for r in range(b):
        t = 1.0
        c0 = c1 = c2 = 0.0
        for i in range(n):
            a = -np.expm1(-deltas[r, i] * sigmas[r, i])
            w = t * a
            trans[r, i] = t
            alphas[r, i] = a
            weights[r, i] = w
            c0 += w * rgbs[r, i, 0]
            c1 += w * rgbs[r, i, 1]
            c2 += w * rgbs[r, i, 2]
            t *= 1.0 - a
        residual[r] = t
        color[r, 0] = c0 + t * background[0]
        color[r, 1] = c1 + t * background[1]
        color[r, 2] = c2 + t * background[2]
    return color, weights, trans, alphas, residual


@njit(cache=True)
def composite_backward(d_color, rgbs, deltas, weights, trans, alphas, residual,
                       background, d_sigma, d_rgb):
    """Adjoint of composite_forward.

    dC/dsigma_i = delta_i * (T_i e^{-delta_i sigma_i} c_i - S_i) where S_i is
    the tail sum_{j>i} w_j c_j + T_res * bg; dC/dc_i = w_i. Tails are
    accumulated back-to-front per ray.
    """
    b, n = weights.shape
    for r in range(b):
        g0, g1, g2 = d_color[r, 0], d_color[r, 1], d_color[r, 2]
        s0 = residual[r] * background[0]
        s1 = residual[r] * background[1]
        s2 = residual[r] * background[2]
        for i in range(n - 1, -1, -1):
            w = weights[r, i]
            d_rgb[r, i, 0] = w * g0
            d_rgb[r, i, 1] = w * g1
            d_rgb[r, i, 2] = w * g2
            survive = trans[r, i] * (1.0 - alphas[r, i])
            d_sigma[r, i] = deltas[r, i] * (
                survive * (rgbs[r, i, 0] * g0 + rgbs[r, i, 1] * g1 + rgbs[r, i, 2] * g2)
                - (s0 * g0 + s1 * g1 + s2 * g2))
            s0 += w * rgbs[r, i, 0]
            s1 += w * rgbs[r, i, 1]
            s2 += w * rgbs[r, i, 2]
