"""Mean-variance allocation under a power-law broker fee.

A trader with account value ``P_v`` invests a fraction ``x`` equally in
``N`` assets (``x_i = x / N``). With a one-factor market model the
objective is ``L = lam E(R) - Var(R)`` where

    E(R)   = beta_bar (E_M - r) x + r - (1 + r) C P_v^(delta-1) N^(1-delta) x^delta
    Var(R) = x^2 (beta_bar^2 Var_M + Var_eps / N)

and the fee for investing ``a`` is ``min(C a^delta, F_max)``. The fee term
of the objective is the uncapped power law; allocations that cross the cap
are flagged.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .bootstrap import DEFAULT_B, BootstrapCI, bca_bootstrap

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class UnsupportedRegimeError(ValueError):
    pass


class NoRootError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MarketParams:
    expected_market_return: float
    market_variance: float
    risk_free: float
    mean_beta: float
    mean_idio_variance: float

    def __post_init__(self):
        if not self.market_variance > 0:
            raise ValueError("market variance must be positive")
        if not self.mean_idio_variance > 0:
            raise ValueError("mean idiosyncratic variance must be positive")
        if self.risk_free < 0:
            raise ValueError("risk-free rate must be non-negative")

    @property
    def premium(self):
        """``beta_bar (E_M - r)``."""
        return self.mean_beta * (self.expected_market_return - self.risk_free)

    @property
    def risk_ratio(self):
        """``beta_bar^2 Var_M / Var_eps``."""
        return self.mean_beta ** 2 * self.market_variance / self.mean_idio_variance


@dataclass(frozen=True)
class FeeSchedule:
    """Power-law fee ``min(C a^delta, f_max)``, optionally backed by a segment grid."""

    C: float
    delta: float
    f_max: float = math.inf
    segments: Optional[Tuple[Tuple[float, float, float], ...]] = None

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("fee coefficient C must be non-negative")
        if not 0 <= self.delta <= 1:
            raise ValueError("fee exponent delta must lie in [0, 1]")
        if not self.f_max > 0:
            raise ValueError("fee cap must be positive")
        if self.segments is not None:
            object.__setattr__(self, "segments", _check_segments(self.segments))


def _check_segments(segments):
    segs = tuple((float(a), float(b), float(f)) for a, b, f in segments)
    if not segs:
        raise ValueError("empty fee grid")
    for i, (a, b, f) in enumerate(segs):
        if not (0 <= a < b) or f < 0:
            raise ValueError("bad fee segment %d: %r" % (i, (a, b, f)))
        if i and (a != segs[i - 1][1] or f < segs[i - 1][2]):
            raise ValueError("fee segments must be contiguous with non-decreasing fees")
    return segs


def fee(amount, schedule):
    """Broker fee for investing ``amount``: grid lookup when segments exist, else the power law."""
    a = np.asarray(amount, dtype=float)
    if np.any(a < 0):
        raise ValueError("amount must be non-negative")
    if schedule.segments is not None:
        lows = np.array([s[0] for s in schedule.segments])
        fees = np.array([s[2] for s in schedule.segments])
        idx = np.clip(np.searchsorted(lows, a, side="right") - 1, 0, len(fees) - 1)
        out = np.minimum(fees[idx], schedule.f_max)
    else:
        out = np.minimum(schedule.C * a ** schedule.delta, schedule.f_max)
    return float(out) if out.ndim == 0 else out


def load_fee_segments(stream):
    """Fee grid CSV with header ``lower_bound,upper_bound,fee``."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(bytes(stream).decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["lower_bound", "upper_bound", "fee"]:
        raise ValueError("fee grid header must be lower_bound,upper_bound,fee")
    rows = []
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            raise ValueError("line %d: expected 3 fields" % reader.line_num)
        try:
            rows.append(tuple(float(v) for v in row))
        except ValueError:
            raise ValueError("line %d: non-numeric value" % reader.line_num) from None
    return _check_segments(rows)


# --------------------------------------------------------------------------- #
# Fee-curve fit
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class FeeFit:
    C: float
    delta: float
    f_max: float
    ci_C: Optional[BootstrapCI] = None
    ci_delta: Optional[BootstrapCI] = None
    n_segments: int = 0

    def schedule(self, segments=None):
        return FeeSchedule(C=self.C, delta=self.delta, f_max=self.f_max, segments=segments)


def _loglog_fit(pts, w=None):
    lx, ly = pts[:, 0], pts[:, 1]
    w = np.ones_like(lx) if w is None else w
    W = w.sum()
    mx, my = np.dot(w, lx) / W, np.dot(w, ly) / W
    sxx = np.dot(w, (lx - mx) ** 2)
    if sxx <= 0:
        raise ValueError("segment midpoints do not vary")
    d = np.dot(w, (lx - mx) * (ly - my)) / sxx
    return d, math.exp(my - d * mx)


def fit_fee_powerlaw(segments, B=DEFAULT_B, seed=0, level=0.95):
    """Least-squares power law through the (midpoint, fee) pairs in log-log space.

    Segments with a zero fee carry no information on the log scale and are
    rejected. ``B=0`` skips the bootstrap over segments.
    """
    segs = _check_segments(segments)
    if len(segs) < 3:
        raise ValueError("need at least 3 fee segments, got %d" % len(segs))
    mids = np.array([(a + b) / 2 for a, b, _ in segs])
    fees = np.array([f for _, _, f in segs])
    if np.any(fees <= 0):
        raise ValueError("fees must be positive for a log-log fit")
    pts = np.column_stack([np.log(mids), np.log(fees)])
    d, C = _loglog_fit(pts)
    ci_c = ci_d = None
    if B:
        ci_d, ci_c = bca_bootstrap(lambda p, w: _loglog_fit(p, w), pts, B=B, seed=seed,
                                   level=level, weighted=True, theta_hat=(d, C))
    return FeeFit(C=float(C), delta=float(d), f_max=float(fees.max()), ci_C=ci_c, ci_delta=ci_d,
                  n_segments=len(segs))


# --------------------------------------------------------------------------- #
# Objective
# --------------------------------------------------------------------------- #
def expected_return(x, N, P_v, market, schedule):
    drag = 0.0
    if x > 0 and schedule.C > 0:
        drag = ((1 + market.risk_free) * schedule.C * P_v ** (schedule.delta - 1.0)
                * N ** (1.0 - schedule.delta) * x ** schedule.delta)
    return market.premium * x + market.risk_free - drag


def variance(x, N, market):
    return x * x * (market.mean_beta ** 2 * market.market_variance + market.mean_idio_variance / N)


def objective(x, N, lam, P_v, market, schedule):
    """``lam E(R) - Var(R)`` for an equal-weight portfolio of ``N`` assets."""
    if not 0 <= x <= 1:
        raise ValueError("x must lie in [0, 1]")
    if N < 1:
        raise ValueError("N must be at least 1")
    return lam * expected_return(x, N, P_v, market, schedule) - variance(x, N, market)


def k_ratio(N, market):
    """Residual-to-market risk ratio ``2 (beta_bar^2 Var_M / Var_eps + 1/N)^-1``."""
    return 2.0 / (market.risk_ratio + 1.0 / N)


def k_ratio_limit(market):
    return 2.0 / market.risk_ratio


def fee_cap_active(x, N, P_v, schedule):
    if x <= 0:
        return False
    return schedule.C * (x * P_v / N) ** schedule.delta > schedule.f_max


# --------------------------------------------------------------------------- #
# Optimal fraction
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class OptimalAllocation:
    x_star: float
    n_star: float
    k_ratio: float
    objective_value: float
    residual: float
    interior_root: Optional[float]
    boundary: bool
    multimodal: bool
    fee_cap_active: bool
    lam: float
    n_rounded: Optional[int] = None
    neighbours: dict = field(default_factory=dict)

    @property
    def flags(self):
        return {"boundary": self.boundary, "multimodal": self.multimodal,
                "fee_cap_active": self.fee_cap_active}


def _fee_slope(N, P_v, market, schedule):
    """``B`` in ``L'(x) = lam (A - B x^(delta-1)) - 2 D x``."""
    if schedule.C == 0:
        return 0.0
    return (schedule.delta * (1 + market.risk_free) * schedule.C
            * (N / P_v) ** (1.0 - schedule.delta))


def fixed_point_rhs(x, N, lam, P_v, market, schedule):
    """Right side of the first-order condition ``x = RHS(x)``."""
    D = market.mean_beta ** 2 * market.market_variance + market.mean_idio_variance / N
    B = _fee_slope(N, P_v, market, schedule)
    d = schedule.delta
    fee_term = B * x ** (d - 1.0) if (B and d < 1) else (B if d == 1 else 0.0)
    return lam / (2.0 * D) * (market.premium - fee_term)


def _golden_max(f, lo, hi, tol=1e-12):
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _bisect_decreasing(h, lo, hi, iters=200):
    """Root of ``h`` on ``[lo, hi]`` with ``h(lo) > 0 > h(hi)``."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def solve_x_star(N, lam, P_v, market, schedule, check=True):
    """Globally optimal fraction ``x*`` in ``[0, 1]`` for fixed ``N``.

    For ``0 < delta < 1`` the derivative ``L'(x)`` is concave and tends to
    minus infinity at zero, so the interior maximum is its larger root,
    bracketed to the right of the peak of ``L'`` and bisected. Candidates
    ``0``, ``1`` and the interior root are compared on the objective and a
    golden-section search of the interior branch cross-checks the result.
    """
    if not lam > 0:
        raise ValueError("risk tolerance lam must be positive")
    if N < 1:
        raise ValueError("N must be at least 1")
    d = schedule.delta
    D = market.mean_beta ** 2 * market.market_variance + market.mean_idio_variance / N
    A = market.premium
    B = _fee_slope(N, P_v, market, schedule)

    def L(x):
        return objective(x, N, lam, P_v, market, schedule)

    def h(x):  # L'(x)
        return lam * (A - (B * x ** (d - 1.0) if (B and d < 1) else B)) - 2.0 * D * x

    root = None
    multimodal = False
    if schedule.C == 0 or d == 1:
        # linear first-order condition
        root = lam * (A - (B if d == 1 else 0.0)) / (2.0 * D)
        x_int = min(max(root, 0.0), 1.0)
        candidates = [x_int]
    elif d == 0:
        # flat fee: quadratic on (0, 1], jump at zero
        root = lam * A / (2.0 * D)
        candidates = [0.0, min(max(root, 0.0), 1.0)]
        multimodal = root > 0
    else:
        x_peak = (lam * B * (1.0 - d) / (2.0 * D)) ** (1.0 / (2.0 - d))
        candidates = [0.0]
        if h(x_peak) > 0:
            hi = max(2.0 * x_peak, lam * A / (2.0 * D))
            while h(hi) > 0:
                hi *= 2.0
            lo, hi = _bisect_decreasing(h, x_peak, hi)
            g_lo = abs(lo - fixed_point_rhs(lo, N, lam, P_v, market, schedule))
            g_hi = abs(hi - fixed_point_rhs(hi, N, lam, P_v, market, schedule))
            root = lo if g_lo <= g_hi else hi
            candidates.append(min(root, 1.0))
            multimodal = x_peak < 1.0
    values = [L(c) for c in candidates]
    best = int(np.argmax(values))
    x_star = candidates[best]
    if check and 0.0 < x_star < 1.0 and d < 1 and schedule.C > 0 and d > 0:
        lo_edge = (lam * B * (1.0 - d) / (2.0 * D)) ** (1.0 / (2.0 - d))
        xg = _golden_max(L, lo_edge, 1.0)
        if L(xg) > values[best] + 1e-12 * max(1.0, abs(values[best])):
            raise SolverError("golden-section cross-check found a better point "
                              "(%.15g vs %.15g)" % (xg, x_star))
    residual = abs(x_star - fixed_point_rhs(x_star, N, lam, P_v, market, schedule)) \
        if 0.0 < x_star < 1.0 else float("nan")
    return OptimalAllocation(
        x_star=float(x_star), n_star=float(N), k_ratio=k_ratio(N, market),
        objective_value=float(values[best]), residual=float(residual),
        interior_root=None if root is None else float(root),
        boundary=x_star in (0.0, 1.0), multimodal=bool(multimodal),
        fee_cap_active=fee_cap_active(x_star, N, P_v, schedule), lam=float(lam))


# --------------------------------------------------------------------------- #
# Optimal number of assets
# --------------------------------------------------------------------------- #
def implied_lambda(x, N, P_v, market, schedule):
    """Risk tolerance for which ``N`` is stationary at fraction ``x``."""
    d = schedule.delta
    return (market.mean_idio_variance * P_v ** (1.0 - d)
            / ((1.0 - d) * schedule.C * (1 + market.risk_free) * (N / x) ** (2.0 - d)))


def n_equation(N, x, P_v, market, schedule):
    """Residual of the joint first-order condition in ``N`` (zero at the optimum).

    ``N^(2-d) (1 + d/(1-d) K/(4N)) - K/4 * Z (x P_v)^(1-d)`` with the exact
    ``N``-dependent ``K`` and ``Z = beta_bar (E_M - r) / ((1-d) C (1+r))``.
    """
    d = schedule.delta
    K = k_ratio(N, market)
    Z = market.premium / ((1.0 - d) * schedule.C * (1 + market.risk_free))
    return N ** (2.0 - d) * (1.0 + d / (1.0 - d) * K / (4.0 * N)) - K / 4.0 * Z * (x * P_v) ** (1.0 - d)


@dataclass(frozen=True)
class NStar:
    n_raw: float
    n_rounded: int
    k_ratio: float
    lam: float
    objective_floor: float
    objective_ceil: float
    objective_raw: float
    x: float


def solve_n_star(x, P_v, market, schedule, n_max=1e9, rtol=1e-10):
    """Real-valued optimal number of assets for an invested fraction ``x``.

    Bracket-doubling from ``N = 1`` then bisection to relative ``rtol``.
    The implied risk tolerance and the objective at the raw value and at
    both integer neighbours are reported.
    """
    d = schedule.delta
    if d >= 1:
        raise UnsupportedRegimeError("proportional fees (delta >= 1): optimum does not depend on N")
    if not 0 < x <= 1:
        raise ValueError("x must lie in (0, 1]")
    if schedule.C <= 0 or market.premium <= 0:
        raise NoRootError("no finite optimum: fee coefficient and risk premium must be positive")

    def f(N):
        return n_equation(N, x, P_v, market, schedule)

    if f(1.0) > 0:
        raise NoRootError("optimal N lies below 1 (residual %.3g at N=1)" % f(1.0))
    lo, hi = 1.0, 2.0
    while f(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if hi > n_max:
            if f(n_max) <= 0:
                raise NoRootError("no root of the N equation in [1, %.0e]" % n_max)
            hi = n_max
            break
    while hi - lo > rtol * lo:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) <= 0:
            lo = mid
        else:
            hi = mid
    N = lo if abs(f(lo)) <= abs(f(hi)) else hi
    lam = implied_lambda(x, N, P_v, market, schedule)
    fl, ce = max(1, math.floor(N)), max(1, math.ceil(N))
    L_fl = objective(x, fl, lam, P_v, market, schedule)
    L_ce = objective(x, ce, lam, P_v, market, schedule)
    return NStar(n_raw=N, n_rounded=int(max(1, round(N))), k_ratio=k_ratio(N, market), lam=lam,
                 objective_floor=L_fl, objective_ceil=L_ce,
                 objective_raw=objective(x, N, lam, P_v, market, schedule), x=x)


def n_star_asymptotic(x, P_v, market, schedule):
    """Large-``N`` optimum ``(K Z / 4)^(1/(2-d)) (x P_v)^((1-d)/(2-d))`` with the limiting ``K``."""
    d = schedule.delta
    if d >= 1:
        raise UnsupportedRegimeError("proportional fees (delta >= 1) have no asymptotic N")
    K = k_ratio_limit(market)
    Z = market.premium / ((1.0 - d) * schedule.C * (1 + market.risk_free))
    return (K * Z / 4.0) ** (1.0 / (2.0 - d)) * (x * P_v) ** ((1.0 - d) / (2.0 - d))


def solve_joint(lam, P_v, market, schedule, tol=1e-13, max_iter=100000):
    """Optimal ``(x*, N*)`` for a given risk tolerance.

    For fixed ``x`` the objective has a single stationary point in ``N``,
    ``N = x c`` with ``c`` from the implied-tolerance relation; the profile
    ``L(x, max(1, x c))`` is maximized by golden section and then refined
    by alternating exact coordinate updates.
    """
    d = schedule.delta
    if d >= 1 or schedule.C == 0:
        raise UnsupportedRegimeError("joint optimum needs 0 <= delta < 1 and C > 0")
    c = (market.mean_idio_variance * P_v ** (1.0 - d)
         / (lam * (1.0 - d) * schedule.C * (1 + market.risk_free))) ** (1.0 / (2.0 - d))

    def n_of(x):
        return max(1.0, c * x)

    def prof(x):
        return objective(x, n_of(x), lam, P_v, market, schedule)

    grid = np.concatenate([[0.0], np.geomspace(1e-9, 1.0, 400)])
    vals = np.array([prof(g) for g in grid])
    i = int(np.argmax(vals))
    if i == 0:
        x = 0.0
    else:
        x = _golden_max(prof, grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)])
        if prof(grid[i]) > prof(x):
            x = grid[i]
    N = n_of(x) if x > 0 else 1.0
    for _ in range(max_iter):
        if x == 0.0:
            break
        alloc = solve_x_star(N, lam, P_v, market, schedule, check=False)
        x_new = alloc.x_star
        N_new = n_of(x_new) if x_new > 0 else N
        if abs(x_new - x) <= tol and abs(N_new - N) <= tol * N:
            x, N = x_new, N_new
            break
        x, N = x_new, N_new
    alloc = solve_x_star(N, lam, P_v, market, schedule)
    nr = int(max(1, round(N)))
    nb = {}
    for m in sorted({max(1, math.floor(N)), max(1, math.ceil(N))}):
        a = solve_x_star(m, lam, P_v, market, schedule)
        nb[m] = {"x_star": a.x_star, "objective": a.objective_value}
    return OptimalAllocation(
        x_star=alloc.x_star, n_star=float(N), k_ratio=k_ratio(N, market),
        objective_value=alloc.objective_value, residual=alloc.residual,
        interior_root=alloc.interior_root, boundary=alloc.boundary, multimodal=alloc.multimodal,
        fee_cap_active=alloc.fee_cap_active, lam=float(lam), n_rounded=nr, neighbours=nb)


# --------------------------------------------------------------------------- #
# Exponent algebra
# --------------------------------------------------------------------------- #
def exponents(delta):
    """``alpha = (1-d)/(2-d)`` (log N vs log T_Phi) and ``beta = 1/(2-d)`` (log T vs log P_v)."""
    if not 0 <= delta <= 1:
        raise ValueError("delta must lie in [0, 1]")
    return {"alpha": (1.0 - delta) / (2.0 - delta), "beta": 1.0 / (2.0 - delta)}


def delta_eff(beta):
    """Fee exponent implied by a turnover-wealth slope: ``2 - 1/beta``."""
    if beta < 0.5:
        raise ValueError("beta = %.4g < 1/2: flat-fee or sub-flat regime, no effective delta" % beta)
    if beta > 1:
        raise ValueError("beta = %.4g > 1 lies outside the cost model" % beta)
    return 2.0 - 1.0 / beta


# --------------------------------------------------------------------------- #
# One-factor model estimation
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SharpeEstimate:
    betas: dict
    idio_variances: dict
    mean_beta: float
    mean_idio_variance: float
    skipped: dict


def estimate_sharpe(asset_returns, market_returns, r, min_obs=30, names=None):
    """Per-asset regression of excess returns on the market excess, through the origin.

    ``asset_returns`` is ``(T, n_assets)``; rows with a non-finite value
    are dropped per asset. Assets with fewer than ``min_obs`` usable rows
    are skipped and reported. Idiosyncratic variance is the residual sum of
    squares over ``n - 1``.
    """
    R = np.asarray(asset_returns, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    m = np.asarray(market_returns, dtype=float).ravel()
    if R.shape[0] != len(m):
        raise ValueError("asset and market returns are not aligned")
    names = list(names) if names is not None else list(range(R.shape[1]))
    betas, ivar, skipped = {}, {}, {}
    for j, name in enumerate(names):
        ok = np.isfinite(R[:, j]) & np.isfinite(m)
        n = int(ok.sum())
        if n < min_obs:
            skipped[name] = "only %d aligned observations (< %d)" % (n, min_obs)
            continue
        xe = m[ok] - r
        ye = R[ok, j] - r
        sxx = np.dot(xe, xe)
        if sxx == 0:
            skipped[name] = "market excess return is identically zero"
            continue
        b = np.dot(xe, ye) / sxx
        res = ye - b * xe
        betas[name] = float(b)
        ivar[name] = float(np.dot(res, res) / (n - 1))
    if not betas:
        raise ValueError("no asset has enough observations")
    return SharpeEstimate(betas=betas, idio_variances=ivar,
                          mean_beta=float(np.mean(list(betas.values()))),
                          mean_idio_variance=float(np.mean(list(ivar.values()))),
                          skipped=skipped)
