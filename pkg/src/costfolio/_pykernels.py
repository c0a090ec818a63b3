"""Pure numpy implementations of the compiled kernels.

Used when the extension is unavailable or ``COSTFOLIO_PURE_PYTHON=1``.
Results agree with ``_ckernels`` to floating-point rounding.
"""

import numpy as np


def pareto_scan(logx, w, candidates, min_tail, hint=-1):
    logx = np.asarray(logx, dtype=float)
    w = np.asarray(w, dtype=float)
    sw = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    sl = np.concatenate([np.cumsum((w * logx)[::-1])[::-1], [0.0]])

    order = list(candidates)
    if hint >= 0:
        order = [hint] + [k for k in order if k != hint]

    best_k, best_g, best_d = -1, 0.0, 2.0
    for k in order:
        k = int(k)
        wt = sw[k]
        if wt < min_tail or w[k] <= 0.0:
            continue
        denom = sl[k] - wt * logx[k]
        if denom <= 0.0:
            continue
        gam = 1.0 + wt / denom
        wk = w[k:]
        keep = wk > 0
        lx = logx[k:][keep]
        wk = wk[keep]
        F = 1.0 - np.exp(-(gam - 1.0) * (lx - logx[k]))
        hi = np.cumsum(wk) / wt
        lo = hi - wk / wt
        D = max(np.max(np.abs(F - lo)), np.max(np.abs(hi - F)))
        if D < best_d or (D == best_d and k < best_k):
            best_k, best_g, best_d = k, gam, D
    return best_k, best_g, best_d


def loess_eval(x, y, rw, k, xq):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rw = np.asarray(rw, dtype=float)
    n = len(x)
    fit = np.empty(len(xq))
    slope = np.empty(len(xq))
    lo = 0
    for q, x0 in enumerate(xq):
        while lo + k < n and x[lo + k] - x0 < x0 - x[lo]:
            lo += 1
        xs = x[lo:lo + k]
        h = max(x0 - xs[0], xs[-1] - x0) * 1.0000001 + 1e-300
        d = np.abs(xs - x0) / h
        wj = np.where(d < 1.0, (1.0 - d**3) ** 3, 0.0) * rw[lo:lo + k]
        sw = wj.sum()
        if sw <= 0.0:
            fit[q] = slope[q] = np.nan
            continue
        dx = xs - x0
        mx = (wj * dx).sum() / sw
        my = (wj * y[lo:lo + k]).sum() / sw
        vxx = (wj * (dx - mx) ** 2).sum()
        if np.sqrt(vxx / sw) <= 1e-12 * h:
            slope[q] = 0.0
            fit[q] = my
        else:
            slope[q] = (wj * (dx - mx) * (y[lo:lo + k] - my)).sum() / vxx
            fit[q] = my - slope[q] * mx
    return fit, slope


def zm_derivs(x, w, c, g, b):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    u = 1.0 / (c + x)
    q = b + g * u
    lcx = np.log(c + x)
    lc = np.log(c)
    q2 = q * q
    ll = np.dot(w, g * (lc - lcx) - b * x + np.log(q))
    grad = np.array([
        np.dot(w, g / c - g * u - g * u * u / q),
        np.dot(w, lc - lcx + u / q),
        np.dot(w, -x + 1.0 / q),
    ])
    hcc = np.dot(w, -g / c**2 + g * u**2 + (2 * g * u**3 * q - g * g * u**4) / q2)
    hcg = np.dot(w, 1.0 / c - u - u * u / q + g * u**3 / q2)
    hcb = np.dot(w, g * u * u / q2)
    hgg = np.dot(w, -u * u / q2)
    hgb = np.dot(w, -u / q2)
    hbb = np.dot(w, -1.0 / q2)
    hess = np.array([[hcc, hcg, hcb], [hcg, hgg, hgb], [hcb, hgb, hbb]])
    return float(ll), grad, hess


def gather_moments(x, idx):
    v = np.asarray(x, dtype=float)[idx]
    return float(v.sum()), float(np.dot(v, v))
