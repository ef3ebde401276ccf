"""Compiled pair loops for the closed-form L2 metric and right-hand side.

The NumPy implementations in ``assembler`` are the readable reference; these
kernels compute the same sums term by term without allocating the pair
arrays, which dominates run time for mixtures with tens of terms.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

FLUSH_RATIO = 1e-100


@njit(cache=True)
def metric_kernel(amps, widths, centers):
    r, d = centers.shape
    p = d + 2
    M = np.zeros((r * p, r * p))
    dk = np.empty(d)
    dm = np.empty(d)
    for k in range(r):
        L2k = widths[k] ** 2
        sAk = 2 * amps[k]
        sLk = 2 * amps[k] ** 2 / widths[k] ** 3
        sck = 2 * amps[k] ** 2 / L2k
        for m in range(k, r):
            L2m = widths[m] ** 2
            S = L2k + L2m
            a = L2k * L2m / S
            s = a / 2
            dist = 0.0
            for j in range(d):
                dist += (centers[k, j] - centers[m, j]) ** 2
            overlap = math.exp(-dist / S)
            if overlap < FLUSH_RATIO:
                continue
            W = overlap * (math.pi * a) ** (d / 2)
            qk = d * s
            qm = d * s
            dot = 0.0
            for j in range(d):
                mu = (L2m * centers[k, j] + L2k * centers[m, j]) / S
                dk[j] = mu - centers[k, j]
                dm[j] = mu - centers[m, j]
                qk += dk[j] ** 2
                qm += dm[j] ** 2
                dot += dk[j] * dm[j]
            sAm = 2 * amps[m]
            sLm = 2 * amps[m] ** 2 / widths[m] ** 3
            scm = 2 * amps[m] ** 2 / L2m
            i0 = k * p
            j0 = m * p
            M[i0, j0] = W * sAk * sAm
            M[i0, j0 + 1] = W * sAk * sLm * qm
            M[i0 + 1, j0] = W * sLk * sAm * qk
            M[i0 + 1, j0 + 1] = W * sLk * sLm * (qk * qm + 2 * d * s * s + 4 * s * dot)
            for l in range(d):
                M[i0, j0 + 2 + l] = W * sAk * scm * dm[l]
                M[i0 + 2 + l, j0] = W * sck * sAm * dk[l]
                M[i0 + 1, j0 + 2 + l] = W * sLk * scm * (qk * dm[l] + 2 * s * dk[l])
                M[i0 + 2 + l, j0 + 1] = W * sck * sLm * (qm * dk[l] + 2 * s * dm[l])
                for l2 in range(d):
                    v = dk[l] * dm[l2]
                    if l == l2:
                        v += s
                    M[i0 + 2 + l, j0 + 2 + l2] = W * sck * scm * v
            if m != k:
                for u in range(p):
                    for v_ in range(p):
                        M[j0 + v_, i0 + u] = M[i0 + u, j0 + v_]
            else:
                for u in range(p):
                    for v_ in range(u + 1, p):
                        M[i0 + v_, i0 + u] = M[i0 + u, i0 + v_]
    return M


@njit(cache=True)
def rhs_kernel(amps, widths, centers, x0, Q, Pc, E1, E2, pmax):
    """``f[k, a] = sum_m A_m^2 W_km sum_p Pc[k,a,p] E_km[y^E1[p] Q_m(y)]``."""
    r, d = centers.shape
    K1 = E1.shape[0]
    K2 = E2.shape[0]
    npar = Pc.shape[1]
    f = np.zeros((r, npar))
    T = np.empty((d, pmax + 1))
    H = np.empty(K1)
    for k in range(r):
        L2k = widths[k] ** 2
        Hk = np.zeros(K1)
        for m in range(r):
            L2m = widths[m] ** 2
            S = L2k + L2m
            a = L2k * L2m / S
            s = a / 2
            dist = 0.0
            for j in range(d):
                dist += (centers[k, j] - centers[m, j]) ** 2
            overlap = math.exp(-dist / S)
            if overlap < FLUSH_RATIO:
                continue
            W = overlap * (math.pi * a) ** (d / 2) * amps[m] ** 2
            for j in range(d):
                mu = (L2m * centers[k, j] + L2k * centers[m, j]) / S - x0[j]
                T[j, 0] = 1.0
                if pmax >= 1:
                    T[j, 1] = mu
                for q in range(2, pmax + 1):
                    T[j, q] = mu * T[j, q - 1] + (q - 1) * s * T[j, q - 2]
            for p_ in range(K1):
                h = 0.0
                for q in range(K2):
                    c = Q[m, q]
                    if c == 0.0:
                        continue
                    g = 1.0
                    for j in range(d):
                        g *= T[j, E1[p_, j] + E2[q, j]]
                    h += c * g
                H[p_] = h
            for p_ in range(K1):
                Hk[p_] += W * H[p_]
        for a_ in range(npar):
            acc = 0.0
            for p_ in range(K1):
                acc += Pc[k, a_, p_] * Hk[p_]
            f[k, a_] = acc
    return f.reshape(-1)


@njit(cache=True)
def operator_terms_kernel(widths, b, nu, div_idx, div_val, flux_idx, flux_val,
                          drift_idx, drift_val, idx_lin, idx_sq, idx_one, K2):
    """Coefficients of ``L g_m / (A_m^2 e_m)`` as a polynomial in ``y``.

    ``b`` holds the shifted centers; ``drift_idx`` rows are padded with -1.
    """
    r, d = b.shape
    Q = np.zeros((r, K2))
    for m in range(r):
        L2 = widths[m] ** 2
        for i in range(div_idx.shape[0]):
            Q[m, div_idx[i]] -= div_val[i]
        for i in range(flux_idx.shape[0]):
            Q[m, flux_idx[i]] += 2 * flux_val[i] / L2
        for l in range(d):
            for i in range(drift_idx.shape[1]):
                if drift_idx[l, i] < 0:
                    break
                Q[m, drift_idx[l, i]] -= 2 * drift_val[l, i] * b[m, l] / L2
            if nu[l] != 0.0:
                Q[m, idx_sq[l]] += 4 * nu[l] / L2**2
                Q[m, idx_lin[l]] -= 8 * nu[l] * b[m, l] / L2**2
                Q[m, idx_one] += nu[l] * (4 * b[m, l] ** 2 / L2**2 - 2 / L2)
    return Q
