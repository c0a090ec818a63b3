# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Signatures mirror ``costfolio._pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, sqrt

cnp.import_array()


cdef inline double _pareto_cdf(double gm1, double lx, double lk) noexcept nogil:
    return 1.0 - exp(-gm1 * (lx - lk))


cdef double _ks_tail(const double[::1] logx, const double[::1] w, const double[::1] sw,
                     double[::1] fc, Py_ssize_t k, double gam, double reject) noexcept nogil:
    """Exact weighted KS distance of the tail from ``k``, or any value > reject.

    A coarse pass bounds the gap inside each interval (both CDFs are monotone
    there), and only intervals whose bound beats the running maximum are
    scanned point by point.
    """
    cdef Py_ssize_t n = logx.shape[0]
    cdef Py_ssize_t m = n - k
    cdef Py_ssize_t stride = <Py_ssize_t>sqrt(<double>m) + 1
    cdef Py_ssize_t a, b, j, nc = 0
    cdef double wt = sw[k], gm1 = gam - 1.0, lk = logx[k]
    cdef double D = 0.0, F, g1, g2, ub
    # coarse points k, k+stride, ..., n-1
    a = k
    while True:
        F = _pareto_cdf(gm1, logx[a], lk)
        fc[nc] = F
        nc += 1
        if w[a] > 0.0:
            g1 = fabs(F - (wt - sw[a]) / wt)
            g2 = fabs((wt - sw[a + 1]) / wt - F)
            if g1 > D:
                D = g1
            if g2 > D:
                D = g2
        if a == n - 1:
            break
        a += stride
        if a > n - 1:
            a = n - 1
    if D > reject:
        return D
    for j in range(nc - 1):
        a = k + j * stride
        b = a + stride
        if b > n - 1:
            b = n - 1
        if b - a < 2:
            continue
        ub = fc[j + 1] - (wt - sw[a + 1]) / wt
        g1 = (wt - sw[b]) / wt - fc[j]
        if g1 > ub:
            ub = g1
        if ub <= D:
            continue
        for a in range(a + 1, b):
            if w[a] <= 0.0:
                continue
            F = _pareto_cdf(gm1, logx[a], lk)
            g1 = fabs(F - (wt - sw[a]) / wt)
            g2 = fabs((wt - sw[a + 1]) / wt - F)
            if g1 > D:
                D = g1
            if g2 > D:
                D = g2
        if D > reject:
            return D
    return D


def pareto_scan(const double[::1] logx, const double[::1] w,
                const long long[::1] candidates, double min_tail, long long hint=-1):
    """Weighted KS scan over candidate cutoffs; returns (index, gamma, D)."""
    cdef Py_ssize_t n = logx.shape[0]
    cdef Py_ssize_t nc = candidates.shape[0]
    cdef cnp.ndarray[double, ndim=1] sw_arr = np.empty(n + 1)
    cdef cnp.ndarray[double, ndim=1] sl_arr = np.empty(n + 1)
    cdef cnp.ndarray[double, ndim=1] fc_arr = np.empty(n + 1)
    cdef double[::1] sw = sw_arr
    cdef double[::1] sl = sl_arr
    cdef double[::1] fc = fc_arr
    cdef Py_ssize_t i, c, k, start
    cdef double wt, gam, denom, D, best_d = 2.0, best_g = 0.0
    cdef long long best_k = -1

    with nogil:
        sw[n] = 0.0
        sl[n] = 0.0
        for i in range(n - 1, -1, -1):
            sw[i] = sw[i + 1] + w[i]
            sl[i] = sl[i + 1] + w[i] * logx[i]

        start = -1 if hint < 0 else 0
        for c in range(start, nc):
            if c < 0:
                k = hint
            else:
                k = candidates[c]
                if k == hint:
                    continue
            wt = sw[k]
            if wt < min_tail or w[k] <= 0.0:
                continue
            denom = sl[k] - wt * logx[k]
            if denom <= 0.0:
                continue
            gam = 1.0 + wt / denom
            D = _ks_tail(logx, w, sw, fc, k, gam, best_d)
            if D < best_d or (D == best_d and k < best_k):
                best_d = D
                best_k = k
                best_g = gam
    return best_k, best_g, best_d


def loess_eval(const double[::1] x, const double[::1] y, const double[::1] rw,
               Py_ssize_t k, const double[::1] xq):
    """Local linear tricube fit at sorted query points; returns (fitted, slope)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = xq.shape[0]
    cdef cnp.ndarray[double, ndim=1] fit_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] slope_arr = np.empty(m)
    cdef double[::1] fit = fit_arr
    cdef double[::1] slope = slope_arr
    cdef Py_ssize_t q, j, lo = 0
    cdef double x0, h, d, u, wj, sw, sx, sy, sxx, sxy, mx, my, vxx, cxy, tot

    with nogil:
        for q in range(m):
            x0 = xq[q]
            while lo + k < n and x[lo + k] - x0 < x0 - x[lo]:
                lo += 1
            h = x0 - x[lo]
            if x[lo + k - 1] - x0 > h:
                h = x[lo + k - 1] - x0
            # widen slightly so the farthest neighbour keeps a sliver of weight
            h = h * 1.0000001 + 1e-300
            sw = 0.0; sx = 0.0; sy = 0.0; sxx = 0.0; sxy = 0.0
            for j in range(lo, lo + k):
                d = fabs(x[j] - x0) / h
                if d >= 1.0:
                    continue
                u = 1.0 - d * d * d
                wj = u * u * u * rw[j]
                if wj <= 0.0:
                    continue
                sw += wj
                sx += wj * (x[j] - x0)
                sy += wj * y[j]
            if sw <= 0.0:
                fit[q] = 0.0 / 0.0
                slope[q] = 0.0 / 0.0
                continue
            mx = sx / sw
            my = sy / sw
            vxx = 0.0
            cxy = 0.0
            for j in range(lo, lo + k):
                d = fabs(x[j] - x0) / h
                if d >= 1.0:
                    continue
                u = 1.0 - d * d * d
                wj = u * u * u * rw[j]
                if wj <= 0.0:
                    continue
                vxx += wj * (x[j] - x0 - mx) * (x[j] - x0 - mx)
                cxy += wj * (x[j] - x0 - mx) * (y[j] - my)
            tot = sqrt(vxx / sw)
            if tot <= 1e-12 * (h + 1e-300):
                slope[q] = 0.0
                fit[q] = my
            else:
                slope[q] = cxy / vxx
                fit[q] = my - slope[q] * mx
    return fit_arr, slope_arr


def zm_derivs(const double[::1] x, const double[::1] w, double c, double g, double b):
    """Weighted Zipf-Mandelbrot log-likelihood with gradient and Hessian in (c, gamma, beta)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t j
    cdef double ll = 0.0, gc = 0.0, gg = 0.0, gb = 0.0
    cdef double hcc = 0.0, hcg = 0.0, hcb = 0.0, hgg = 0.0, hgb = 0.0, hbb = 0.0
    cdef double u, q, wj, lc = log(c), lcx, g2
    cdef cnp.ndarray[double, ndim=1] grad = np.empty(3)
    cdef cnp.ndarray[double, ndim=2] hess = np.empty((3, 3))

    with nogil:
        for j in range(n):
            wj = w[j]
            if wj == 0.0:
                continue
            u = 1.0 / (c + x[j])
            q = b + g * u
            lcx = log(c + x[j])
            g2 = q * q
            ll += wj * (g * (lc - lcx) - b * x[j] + log(q))
            gc += wj * (g / c - g * u - g * u * u / q)
            gg += wj * (lc - lcx + u / q)
            gb += wj * (-x[j] + 1.0 / q)
            hcc += wj * (-g / (c * c) + g * u * u + (2.0 * g * u * u * u * q - g * g * u * u * u * u) / g2)
            hcg += wj * (1.0 / c - u - u * u / q + g * u * u * u / g2)
            hcb += wj * (g * u * u / g2)
            hgg += wj * (-u * u / g2)
            hgb += wj * (-u / g2)
            hbb += wj * (-1.0 / g2)
    grad[0] = gc; grad[1] = gg; grad[2] = gb
    hess[0, 0] = hcc; hess[0, 1] = hcg; hess[0, 2] = hcb
    hess[1, 0] = hcg; hess[1, 1] = hgg; hess[1, 2] = hgb
    hess[2, 0] = hcb; hess[2, 1] = hgb; hess[2, 2] = hbb
    return ll, grad, hess


def gather_moments(const double[::1] x, const cnp.int64_t[::1] idx):
    """``(sum x[idx], sum x[idx]**2)`` without materialising the resample."""
    cdef Py_ssize_t j, n = idx.shape[0]
    cdef double s1 = 0.0, s2 = 0.0, v
    with nogil:
        for j in range(n):
            v = x[idx[j]]
            s1 += v
            s2 += v * v
    return s1, s2
