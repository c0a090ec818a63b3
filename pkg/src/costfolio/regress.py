"""Robust loess smoothing, regime-threshold detection and segmented
double-linear regression.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import kernels


# --------------------------------------------------------------------------- #
# Ordinary least squares
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class OLSFit:
    slope: float
    intercept: float
    slope_ci: tuple
    intercept_ci: Optional[tuple]
    slope_se: float
    intercept_se: float
    r2: float
    xi: float
    n: int
    through_origin: bool
    residuals: np.ndarray = field(repr=False)


def ols(x, y, through_origin=False, level=0.95):
    """Least squares line, optionally forced through the origin.

    ``xi`` is the residual standard deviation with ``n - p`` degrees of
    freedom. Without an intercept ``r2`` is the uncentered coefficient.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = len(x)
    if n != len(y):
        raise ValueError("x and y differ in length")
    if n < 3:
        raise ValueError("need at least 3 points, got %d" % n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    tq = stats.t.ppf(0.5 + level / 2, n - (1 if through_origin else 2))
    if through_origin:
        sxx = np.dot(x, x)
        if sxx == 0:
            raise ValueError("zero variance in x")
        b = np.dot(x, y) / sxx
        a = 0.0
        res = y - b * x
        dof = n - 1
        ssr = np.dot(res, res)
        sst = np.dot(y, y)
        se_b = math.sqrt(ssr / dof / sxx)
        se_a = float("nan")
        a_ci = None
    else:
        mx, my = x.mean(), y.mean()
        dx = x - mx
        sxx = np.dot(dx, dx)
        if sxx <= 1e-300 * max(1.0, mx * mx) * n:
            raise ValueError("zero variance in x")
        b = np.dot(dx, y - my) / sxx
        a = my - b * mx
        res = y - a - b * x
        res = res - res.mean()  # removes rounding drift; exact in real arithmetic
        dof = n - 2
        ssr = np.dot(res, res)
        sst = np.dot(y - my, y - my)
        se_b = math.sqrt(ssr / dof / sxx)
        se_a = math.sqrt(ssr / dof * (1.0 / n + mx * mx / sxx))
        a_ci = (a - tq * se_a, a + tq * se_a)
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return OLSFit(slope=float(b), intercept=float(a), slope_ci=(b - tq * se_b, b + tq * se_b),
                  intercept_ci=a_ci, slope_se=se_b, intercept_se=se_a, r2=float(r2),
                  xi=math.sqrt(ssr / dof), n=n, through_origin=through_origin, residuals=res)


# --------------------------------------------------------------------------- #
# Loess
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class LoessFit:
    span: float
    robustness_iters: int
    x: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    slope: np.ndarray = field(repr=False)
    robustness_weights: np.ndarray = field(repr=False)
    data_x: np.ndarray = field(repr=False, default=None)
    data_y: np.ndarray = field(repr=False, default=None)

    @property
    def grid(self):
        return list(zip(self.x.tolist(), self.fitted.tolist()))

    def predict(self, xq):
        return np.interp(xq, self.x, self.fitted)


def _anchors(xs, delta):
    """Indices of sorted ``xs`` at least ``delta`` apart, always keeping both ends."""
    if delta <= 0:
        return np.arange(len(xs))
    idx = [0]
    last = xs[0]
    for i in range(1, len(xs) - 1):
        if xs[i] - last >= delta:
            idx.append(i)
            last = xs[i]
    idx.append(len(xs) - 1)
    return np.unique(np.asarray(idx))


def _local_fit(xs, ys, rw, k, anchors):
    xa = xs[anchors]
    fa, sa = kernels.loess_eval(xs, ys, rw, k, xa)
    return xa, np.asarray(fa), np.asarray(sa)


def loess_fit(x, y, span=0.75, robustness_iters=4, delta=None):
    """Robust local-linear regression with tricube weights.

    Each local fit uses the ``ceil(span * n)`` nearest neighbours. After
    each pass, bisquare robustness weights are computed from the residuals
    scaled by six median absolute residuals. Local fits are evaluated at
    points at least ``delta`` apart (default one percent of the x-range)
    and linearly interpolated in between; ``delta=0`` fits at every point.

    The stored grid holds the fitted value and the local slope at every
    distinct x.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = len(x)
    if n != len(y):
        raise ValueError("x and y differ in length")
    if n < 20:
        raise ValueError("loess needs at least 20 points, got %d" % n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    if not 0 < span <= 1:
        raise ValueError("span must lie in (0, 1]")
    k = int(math.ceil(span * n))
    if k < 3:
        raise ValueError("span * n = %.3g leaves fewer than 3 neighbours" % (span * n))

    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    if delta is None:
        delta = 0.01 * (xs[-1] - xs[0])
    anchors = _anchors(xs, delta)
    rw = np.ones(n)
    xa, fa, sa = _local_fit(xs, ys, rw, k, anchors)
    for _ in range(int(robustness_iters)):
        res = ys - np.interp(xs, xa, fa)
        s = 6.0 * np.median(np.abs(res))
        if s <= 1e-12 * max(1.0, np.abs(ys).max()):
            break
        u = np.clip(res / s, -1.0, 1.0)
        rw = (1.0 - u * u) ** 2
        xa, fa, sa = _local_fit(xs, ys, rw, k, anchors)

    grid_x = np.unique(xs)
    if len(grid_x) == len(xa) and np.array_equal(grid_x, xa):
        gf, gs = fa, sa
    else:
        gf, gs = np.interp(grid_x, xa, fa), np.interp(grid_x, xa, sa)
    return LoessFit(span=span, robustness_iters=int(robustness_iters), x=grid_x,
                    fitted=gf, slope=gs, robustness_weights=rw[np.argsort(order)],
                    data_x=xs, data_y=ys)


# --------------------------------------------------------------------------- #
# Thresholds
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Thresholds:
    theta1: float
    theta2: float
    single_regime: bool
    slope_low: float
    slope_high: float
    breakpoint: float = float("nan")

    def __iter__(self):
        return iter((self.theta1, self.theta2))


def least_squares_breakpoint(x, y, lo, hi, min_points=10):
    """Split point in ``[lo, hi]`` minimizing the summed SSE of two separate lines.

    Every split between consecutive sorted x values is tried, using prefix
    sums, so the search is exact and linear in ``n`` after sorting.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)

    def prefix(a):
        return np.concatenate([[0.0], np.cumsum(a)])

    sx, sy, sxx, sxy, syy = (prefix(a) for a in (xs, ys, xs * xs, xs * ys, ys * ys))
    cnt = np.arange(n + 1, dtype=float)

    def sse(i, j):
        m = cnt[j] - cnt[i]
        ax, ay = sx[j] - sx[i], sy[j] - sy[i]
        vxx = sxx[j] - sxx[i] - ax * ax / m
        vxy = sxy[j] - sxy[i] - ax * ay / m
        vyy = syy[j] - syy[i] - ay * ay / m
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(vxx > 0, vyy - vxy * vxy / vxx, vyy)

    split = np.arange(np.searchsorted(xs, lo, "left"), np.searchsorted(xs, hi, "right") + 1)
    split = split[(split >= min_points) & (split <= n - min_points)]
    split = split[xs[np.maximum(split - 1, 0)] < xs[np.minimum(split, n - 1)]]  # between distinct x
    if len(split) == 0:
        raise ValueError("no admissible split in [%g, %g]" % (lo, hi))
    total = sse(0, split) + sse(split, n)
    b = split[int(np.argmin(total))]
    return 0.5 * (xs[b - 1] + xs[b])


def detect_thresholds(loess, tol=0.05, edge_fraction=0.2, trim=0.025, min_range=math.log(100.0)):
    """Transition region of a two-regime curve.

    The slope plateaus are the medians of the loess local slope over the
    first and last ``edge_fraction`` of the interior grid (the outer
    ``trim`` quantiles on each side are discarded). Scanning from the first
    grid point closer to the upper plateau, the region runs from the last
    point within ``tol`` of the lower plateau to the first point within
    ``tol`` of the upper one. A level jump at the kink biases the local
    slope to one side, so the region keeps that width but is re-centred on
    the least-squares breakpoint of the data, searched within two widths of
    the scanned region. Plateaus closer than ``tol`` give ``theta1 =
    theta2 = midpoint`` with ``single_regime`` set.
    """
    x = np.asarray(loess.x)
    s = np.asarray(loess.slope)
    if x[-1] - x[0] < min_range:
        raise ValueError("curve spans %.3g in x, less than the required %.3g"
                         % (x[-1] - x[0], min_range))
    lo_q, hi_q = np.quantile(x, [trim, 1.0 - trim])
    inner = (x >= lo_q) & (x <= hi_q)
    xi, si = x[inner], s[inner]
    m = max(1, int(round(edge_fraction * len(xi))))
    s_low = float(np.median(si[:m]))
    s_high = float(np.median(si[-m:]))
    if abs(s_high - s_low) <= tol:
        mid = 0.5 * (x[0] + x[-1])
        return Thresholds(mid, mid, True, s_low, s_high)
    closer_high = np.abs(si - s_high) < np.abs(si - s_low)
    c = int(np.argmax(closer_high))
    low_ok = np.flatnonzero(np.abs(si[:c] - s_low) <= tol)
    high_ok = np.flatnonzero(np.abs(si[c:] - s_high) <= tol)
    t1 = float(xi[low_ok[-1]]) if len(low_ok) else float(xi[0])
    t2 = max(t1, float(xi[c + high_ok[0]]) if len(high_ok) else float(xi[-1]))
    if loess.data_x is None:
        return Thresholds(t1, t2, False, s_low, s_high)
    width = t2 - t1
    reach = max(2.0 * width, 0.05 * (x[-1] - x[0]))
    k = least_squares_breakpoint(loess.data_x, loess.data_y, t1 - reach, t2 + reach)
    return Thresholds(k - width / 2, k + width / 2, False, s_low, s_high, breakpoint=k)


# --------------------------------------------------------------------------- #
# Double-linear model
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SegmentedFit:
    beta1: float
    a1: float
    beta2: float
    a2: float
    theta1: float
    theta2: float
    xi1: float
    xi2: float
    r2_1: float
    r2_2: float
    ci_beta1: tuple
    ci_a1: tuple
    ci_beta2: tuple
    ci_a2: tuple
    n1: int
    n2: int
    n_gap: int
    lower: OLSFit = field(repr=False)
    upper: OLSFit = field(repr=False)


def fit_double_linear(x, y, theta1, theta2, min_points=10, level=0.95):
    """Separate OLS lines below ``theta1`` and above ``theta2``.

    Points in ``[theta1, theta2]`` are excluded from both fits.
    """
    if theta1 > theta2:
        raise ValueError("theta1 must not exceed theta2")
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    lo = x < theta1
    hi = x > theta2
    for name, mask in (("lower", lo), ("upper", hi)):
        if mask.sum() < min_points:
            raise ValueError("%s regime has %d points, need at least %d"
                             % (name, int(mask.sum()), min_points))
    f1 = ols(x[lo], y[lo], level=level)
    f2 = ols(x[hi], y[hi], level=level)
    return SegmentedFit(
        beta1=f1.slope, a1=f1.intercept, beta2=f2.slope, a2=f2.intercept,
        theta1=float(theta1), theta2=float(theta2), xi1=f1.xi, xi2=f2.xi,
        r2_1=f1.r2, r2_2=f2.r2, ci_beta1=f1.slope_ci, ci_a1=f1.intercept_ci,
        ci_beta2=f2.slope_ci, ci_a2=f2.intercept_ci, n1=f1.n, n2=f2.n,
        n_gap=int(len(x) - lo.sum() - hi.sum()), lower=f1, upper=f2)


def segmented_report(fit):
    return {
        "regimes": [
            {"beta": fit.beta1, "a": fit.a1, "xi": fit.xi1, "r2": fit.r2_1, "n": fit.n1,
             "ci_beta": list(fit.ci_beta1), "ci_a": list(fit.ci_a1)},
            {"beta": fit.beta2, "a": fit.a2, "xi": fit.xi2, "r2": fit.r2_2, "n": fit.n2,
             "ci_beta": list(fit.ci_beta2), "ci_a": list(fit.ci_a2)},
        ],
        "theta1": fit.theta1,
        "theta2": fit.theta2,
        "n_gap": fit.n_gap,
        "gap_excluded": True,
    }


# --------------------------------------------------------------------------- #
# Residual normality
# --------------------------------------------------------------------------- #
KS_BAND_5PCT = 1.358


def _normality(res, min_residuals):
    res = np.asarray(res, dtype=float)
    n = len(res)
    sd = math.sqrt(np.dot(res, res) / max(n - 1, 1)) if n else 0.0
    if n == 0 or sd <= 0:
        return {"n": n, "degenerate": True, "ks": float("nan"), "fraction_normal": float("nan"),
                "quantile_range": None, "tail_excess": float("nan"), "tail_flag": False,
                "enough_residuals": n >= min_residuals}
    z = np.sort(res / sd)
    F = stats.norm.cdf(z)
    i = np.arange(1, n + 1)
    dev = np.maximum(np.abs(i / n - F), np.abs(F - (i - 1) / n))
    band = KS_BAND_5PCT / math.sqrt(n)
    ok = dev <= band
    # largest run of in-band points that contains the median
    mid = n // 2
    lo = hi = mid
    if ok[mid]:
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        while hi < n - 1 and ok[hi + 1]:
            hi += 1
        frac = (hi - lo + 1) / n
        qrange = (lo / n, (hi + 1) / n)
    else:
        frac, qrange = 0.0, None
    p3 = 2 * stats.norm.sf(3.0)
    obs = float(np.mean(np.abs(z) > 3.0))
    zscore = (obs - p3) / math.sqrt(p3 * (1 - p3) / n)
    return {"n": n, "degenerate": False, "ks": float(dev.max()), "fraction_normal": float(frac),
            "quantile_range": qrange, "tail_excess": obs - p3, "tail_flag": bool(zscore > 3.0),
            "enough_residuals": n >= min_residuals}


def residual_normality(fit, min_residuals=50):
    """Normality report of standardized residuals against N(0, 1).

    ``fraction_normal`` is the share of sorted residuals in the central run
    where the empirical CDF stays inside the 5% KS band; ``tail_excess`` is
    the observed share beyond three standard deviations minus the Gaussian
    0.27%, flagged when it is more than three binomial standard errors.
    Segmented fits are standardized per regime and pooled.
    """
    if isinstance(fit, SegmentedFit):
        parts = [fit.lower.residuals, fit.upper.residuals]
        regimes = [_normality(r, min_residuals) for r in parts]
        scaled = []
        for r in parts:
            sd = math.sqrt(np.dot(r, r) / max(len(r) - 1, 1))
            scaled.append(r / sd if sd > 0 else np.zeros_like(r))
        pooled = _normality(np.concatenate(scaled), min_residuals)
        pooled["enough_residuals"] = all(r["enough_residuals"] for r in regimes)
        pooled["regimes"] = regimes
        return pooled
    return _normality(fit.residuals, min_residuals)
