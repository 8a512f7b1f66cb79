"""Fused loops for the encoding and its gradient (one pass per ray/Gaussian pair)."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def encode_kernel(mu, lis, rmat, origin, direction, rho):
    m_count, n_count = origin.shape[0], mu.shape[0]
    out = np.empty((m_count, n_count))
    a = np.empty(3)
    b = np.empty(3)
    for n in range(n_count):
        r = rmat[n]
        s0, s1, s2 = np.exp(lis[n, 0]), np.exp(lis[n, 1]), np.exp(lis[n, 2])
        for m in range(m_count):
            w0 = origin[m, 0] - mu[n, 0]
            w1 = origin[m, 1] - mu[n, 1]
            w2 = origin[m, 2] - mu[n, 2]
            d0, d1, d2 = direction[m, 0], direction[m, 1], direction[m, 2]
            inv = 1.0 / rho[m]
            for i in range(3):
                si = (s0 if i == 0 else (s1 if i == 1 else s2)) * inv
                a[i] = (r[0, i] * w0 + r[1, i] * w1 + r[2, i] * w2) * si
                b[i] = (r[0, i] * d0 + r[1, i] * d1 + r[2, i] * d2) * si
            aa = a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
            ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            bb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2]
            out[m, n] = np.exp(ab * ab / bb - aa) if ab < 0.0 else np.exp(-aa)
    return out


@njit(cache=True, fastmath=False)
def grad_kernel(mu, lis, rmat, origin, direction, rho, active, upstream):
    m_count, n_count = origin.shape[0], mu.shape[0]
    values = np.empty((m_count, n_count))
    g_mu = np.zeros((n_count, 3))
    g_lis = np.zeros((n_count, 3))
    acc = np.zeros((n_count, 3, 3))
    g_o = np.zeros((m_count, 3))
    g_d = np.zeros((m_count, 3))
    g_rho = np.zeros(m_count)
    a = np.empty(3)
    b = np.empty(3)
    psi = np.empty(3)
    w = np.empty(3)
    gu = np.empty(3)
    gv = np.empty(3)
    scale = np.exp(lis)
    for n in range(n_count):
        r = rmat[n]
        for m in range(m_count):
            inv = 1.0 / rho[m]
            for i in range(3):
                psi[i] = scale[n, i] * inv
                w[i] = origin[m, i] - mu[n, i]
            for i in range(3):
                a[i] = (r[0, i] * w[0] + r[1, i] * w[1] + r[2, i] * w[2]) * psi[i]
                b[i] = (r[0, i] * direction[m, 0] + r[1, i] * direction[m, 1]
                        + r[2, i] * direction[m, 2]) * psi[i]
            aa = a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
            ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
            bb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2]
            if ab < 0.0:
                k = ab / bb
                p = np.exp(ab * k - aa)
            else:
                k = 0.0
                p = np.exp(-aa)
            values[m, n] = p
            gp = upstream[m, n] * p
            if gp == 0.0:
                continue
            st = 0.0
            for i in range(3):
                ga = gp * (2.0 * k * b[i] - 2.0 * a[i])
                gb = gp * (2.0 * k * a[i] - 2.0 * k * k * b[i])
                s_i = ga * a[i] + gb * b[i]
                g_lis[n, i] += s_i
                st += s_i
                gu[i] = ga * psi[i]
                gv[i] = gb * psi[i]
            if active[m]:
                g_rho[m] -= st * inv
            for i in range(3):
                ro = r[i, 0] * gu[0] + r[i, 1] * gu[1] + r[i, 2] * gu[2]
                g_o[m, i] += ro
                g_mu[n, i] -= ro
                g_d[m, i] += r[i, 0] * gv[0] + r[i, 1] * gv[1] + r[i, 2] * gv[2]
                for j in range(3):
                    acc[n, i, j] += w[i] * gu[j] + direction[m, i] * gv[j]
    return values, g_mu, g_lis, acc, g_o, g_d, g_rho
