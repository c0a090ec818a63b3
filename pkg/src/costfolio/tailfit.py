"""Maximum-likelihood fitting, sampling and bootstrap inference for the
heavy-tailed families used on account values and turnovers.

Families
--------
pareto       tail ``p(x) ~ (x/x_min)^-gamma`` above a KS-selected cutoff
lognormal    ``ln N(mu, sigma^2)``
weibull      stretched exponential, shape ``k`` and scale ``lam``
student      Student-t folded onto the positive axis (scale ``s``, dof ``nu``)
zm           Zipf-Mandelbrot survival ``(c/(c+x))^gamma``
zm-cutoff    Zipf-Mandelbrot with an exponential cutoff ``exp(-beta_cut x)``

Every fitted object doubles as a frozen model exposing ``cdf``, ``sf``,
``pdf``, ``logpdf`` and ``ppf``.
"""

import math
from dataclasses import dataclass, field
from typing import ClassVar, Optional

import numpy as np
from scipy import optimize
from scipy.special import digamma, gammaln, ndtr, ndtri, stdtr, stdtrit

from . import kernels
from .bootstrap import DEFAULT_B, BootstrapCI, bca_bootstrap

GRAD_TOL = 1e-8


class FitError(RuntimeError):
    """Numerical likelihood maximization failed."""


class InsufficientDataError(ValueError):
    pass


class DegenerateDataError(ValueError):
    pass


def _positive(data, n_min, what="data"):
    x = np.asarray(data, dtype=float).ravel()
    if len(x) < n_min:
        raise InsufficientDataError("%s: need at least %d points, got %d" % (what, n_min, len(x)))
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("%s must be finite and strictly positive" % what)
    if np.all(x == x[0]):
        raise DegenerateDataError("all values are equal")
    return x


# --------------------------------------------------------------------------- #
# Families
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class ParetoTailFit:
    gamma: float
    x_min: float
    ks_distance: float = float("nan")
    n_tail: int = 0
    ci_gamma: Optional[BootstrapCI] = None
    ci_xmin: Optional[BootstrapCI] = None
    family: ClassVar[str] = "pareto"

    def __post_init__(self):
        if not self.gamma > 1 or not self.x_min > 0:
            raise ValueError("Pareto tail needs gamma > 1 and x_min > 0")

    @property
    def params(self):
        return {"gamma": self.gamma, "x_min": self.x_min}

    def sf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (np.maximum(x, self.x_min) / self.x_min) ** (1.0 - self.gamma)
        return np.where(x < self.x_min, 1.0, out)

    def cdf(self, x):
        return 1.0 - self.sf(x)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (np.log(self.gamma - 1.0) - np.log(self.x_min)
                  - self.gamma * (np.log(x) - np.log(self.x_min)))
        return np.where(x < self.x_min, -np.inf, lp)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        return self.x_min * (1.0 - u) ** (-1.0 / (self.gamma - 1.0))

    def isf(self, s):
        return self.x_min * np.asarray(s, dtype=float) ** (-1.0 / (self.gamma - 1.0))

    def neg_moment_finite(self, s):
        return True

    def cis(self):
        return {"gamma": self.ci_gamma, "x_min": self.ci_xmin}


@dataclass(frozen=True)
class LogNormalFit:
    mu: float
    sigma: float
    ci_mu: Optional[BootstrapCI] = None
    ci_sigma: Optional[BootstrapCI] = None
    family: ClassVar[str] = "lognormal"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("log-normal sigma must be positive")

    @property
    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}

    def _z(self, x):
        with np.errstate(divide="ignore"):
            return (np.log(np.asarray(x, dtype=float)) - self.mu) / self.sigma

    def cdf(self, x):
        return ndtr(self._z(x))

    def sf(self, x):
        return ndtr(-self._z(x))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        z = self._z(x)
        with np.errstate(divide="ignore"):
            return -0.5 * z * z - np.log(x * self.sigma) - 0.5 * math.log(2 * math.pi)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * ndtri(np.asarray(u, dtype=float)))

    def isf(self, s):
        return np.exp(self.mu - self.sigma * ndtri(np.asarray(s, dtype=float)))

    def neg_moment_finite(self, s):
        return True

    def cis(self):
        return {"mu": self.ci_mu, "sigma": self.ci_sigma}


@dataclass(frozen=True)
class WeibullFit:
    shape: float
    scale: float
    ci_shape: Optional[BootstrapCI] = None
    ci_scale: Optional[BootstrapCI] = None
    family: ClassVar[str] = "weibull"

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull parameters must be positive")

    @property
    def params(self):
        return {"shape": self.shape, "scale": self.scale}

    def sf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return np.exp(-((x / self.scale) ** self.shape))

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-((x / self.scale) ** self.shape))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.log(x) - math.log(self.scale)
            lp = math.log(self.shape) - math.log(self.scale) + (self.shape - 1) * z - np.exp(self.shape * z)
        return np.where(x > 0, lp, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        return self.scale * (-np.log1p(-np.asarray(u, dtype=float))) ** (1.0 / self.shape)

    def isf(self, s):
        return self.scale * (-np.log(np.asarray(s, dtype=float))) ** (1.0 / self.shape)

    def neg_moment_finite(self, s):
        return s < self.shape

    def cis(self):
        return {"shape": self.ci_shape, "scale": self.ci_scale}


@dataclass(frozen=True)
class StudentFit:
    """Student-t folded at zero: density ``2 t_nu(x/s)/s`` on ``x > 0``."""

    dof: float
    scale: float
    ci_dof: Optional[BootstrapCI] = None
    ci_scale: Optional[BootstrapCI] = None
    family: ClassVar[str] = "student"

    def __post_init__(self):
        if not (self.dof > 0 and self.scale > 0):
            raise ValueError("Student parameters must be positive")

    @property
    def params(self):
        return {"dof": self.dof, "scale": self.scale}

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return 2.0 * stdtr(self.dof, x / self.scale) - 1.0

    def sf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return 2.0 * stdtr(self.dof, -x / self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        nu = self.dof
        z = x / self.scale
        lp = (math.log(2.0) + gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
              - (nu + 1) / 2 * np.log1p(z * z / nu) - math.log(self.scale))
        return np.where(x >= 0, lp, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def ppf(self, u):
        return self.scale * stdtrit(self.dof, (1.0 + np.asarray(u, dtype=float)) / 2.0)

    def isf(self, s):
        return self.scale * -stdtrit(self.dof, np.asarray(s, dtype=float) / 2.0)

    def neg_moment_finite(self, s):
        return s < 1

    def cis(self):
        return {"dof": self.ci_dof, "scale": self.ci_scale}


@dataclass(frozen=True)
class ZipfMandelbrotFit:
    """Survival ``F(x) = (c/(c+x))^gamma exp(-beta_cut x)`` on ``x >= 0``."""

    c: float
    gamma: float
    beta_cut: float = 0.0
    ci_c: Optional[BootstrapCI] = None
    ci_gamma: Optional[BootstrapCI] = None
    ci_beta_cut: Optional[BootstrapCI] = None
    beta_at_boundary: bool = False
    with_cutoff: bool = True
    family: ClassVar[str] = "zm-cutoff"

    def __post_init__(self):
        if not (self.c > 0 and self.gamma > 0 and self.beta_cut >= 0):
            raise ValueError("Zipf-Mandelbrot needs c > 0, gamma > 0, beta_cut >= 0")

    @property
    def params(self):
        p = {"c": self.c, "gamma": self.gamma}
        if self.with_cutoff:
            p["beta_cut"] = self.beta_cut
        return p

    def logsf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -self.gamma * np.log1p(x / self.c) - self.beta_cut * x

    def sf(self, x):
        return np.exp(self.logsf(x))

    def cdf(self, x):
        return -np.expm1(self.logsf(x))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lp = self.logsf(x) + np.log(self.beta_cut + self.gamma / (self.c + np.maximum(x, 0.0)))
        return np.where(x >= 0, lp, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def isf(self, s):
        s = np.asarray(s, dtype=float)
        pure = self.c * np.expm1(-np.log(s) / self.gamma)
        if self.beta_cut == 0:
            return pure
        # the cutoff only lowers the survival, so the pure root bounds it above
        target = np.log(s)
        hi = np.minimum(pure, -target / self.beta_cut)
        lo = np.zeros_like(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            above = self.logsf(mid) > target
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
            if np.all(hi - lo <= 1e-12 * np.maximum(hi, 1e-300)):
                break
        return 0.5 * (lo + hi)

    def ppf(self, u):
        return self.isf(1.0 - np.asarray(u, dtype=float))

    def neg_moment_finite(self, s):
        return s < 1

    def cis(self):
        out = {"c": self.ci_c, "gamma": self.ci_gamma}
        if self.with_cutoff:
            out["beta_cut"] = self.ci_beta_cut
        return out


FAMILIES = {
    "pareto": ParetoTailFit,
    "lognormal": LogNormalFit,
    "weibull": WeibullFit,
    "student": StudentFit,
    "zm": ZipfMandelbrotFit,
    "zm-cutoff": ZipfMandelbrotFit,
}


def family_name(model):
    if isinstance(model, ZipfMandelbrotFit):
        return "zm-cutoff" if model.with_cutoff else "zm"
    return model.family


# --------------------------------------------------------------------------- #
# KS distance and sampling
# --------------------------------------------------------------------------- #
def ks_statistic(data, model):
    """Two-sided KS distance between the empirical CDF of ``data`` and ``model``.

    Both one-sided limits of the empirical step function are compared at
    every data point.
    """
    x = np.sort(np.asarray(data, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("empty data")
    F = np.asarray(model.cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n), 0.0))


def sample(model, n, seed):
    """I.i.d. draws by inverse transform, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    s = 1.0 - rng.random(int(n))  # in (0, 1]
    return np.asarray(model.isf(s), dtype=float)


# --------------------------------------------------------------------------- #
# Pareto tail with KS-selected cutoff
# --------------------------------------------------------------------------- #
def _pareto_candidates(counts, min_tail, max_candidates):
    tail = np.cumsum(counts[::-1])[::-1]
    eligible = np.flatnonzero(tail >= min_tail)
    if len(eligible) <= max_candidates:
        return eligible.astype(np.int64)
    half = max_candidates // 2
    lin = np.linspace(0, len(eligible) - 1, half).round().astype(int)
    # second half spaced geometrically in tail size, denser where the tail is short
    sizes = np.geomspace(tail[eligible[0]], tail[eligible[-1]], max_candidates - half)
    geo = np.searchsorted(-tail[eligible], -sizes, side="left").clip(0, len(eligible) - 1)
    return np.unique(eligible[np.concatenate([lin, geo])]).astype(np.int64)


def fit_pareto_tail(data, min_tail=50, max_candidates=256, B=DEFAULT_B, seed=0,
                    level=0.95, jackknife_groups=200):
    """Pareto tail exponent with ``x_min`` chosen by minimum KS distance.

    ``gamma = 1 + n_tail / sum(log(x_i / x_min))`` over the tail. Candidate
    cutoffs are observed values leaving at least ``min_tail`` points; above
    ``max_candidates`` eligible values a rank/tail-size grid of them is used.
    KS ties go to the smaller cutoff. ``B=0`` skips the bootstrap.
    """
    x = np.asarray(data, dtype=float).ravel()
    if len(x) < min_tail:
        raise InsufficientDataError("insufficient tail: %d points < floor %d" % (len(x), min_tail))
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("data must be finite and strictly positive")
    if np.all(x == x[0]):
        raise DegenerateDataError("all values are equal")

    uniq, inv, counts = np.unique(x, return_inverse=True, return_counts=True)
    logu = np.log(uniq)
    cands = _pareto_candidates(counts, min_tail, max_candidates)
    k, gam, D = kernels.pareto_scan(logu, counts.astype(float), cands, float(min_tail), -1)
    if k < 0:
        raise DegenerateDataError("no candidate cutoff leaves a non-degenerate tail")
    n_tail = int(counts[k:].sum())

    ci_g = ci_x = None
    if B:
        def estimator(values, w):
            wu = np.bincount(inv, weights=w, minlength=len(uniq))
            kb, gb, _ = kernels.pareto_scan(logu, wu, cands, float(min_tail), k)
            if kb < 0:
                raise ValueError("degenerate resample")
            return gb, uniq[kb]

        ci_g, ci_x = bca_bootstrap(estimator, x, B=B, seed=seed, level=level, weighted=True,
                                   jackknife_groups=jackknife_groups, theta_hat=(gam, uniq[k]))
    return ParetoTailFit(gamma=float(gam), x_min=float(uniq[k]), ks_distance=float(D),
                         n_tail=n_tail, ci_gamma=ci_g, ci_xmin=ci_x)


# --------------------------------------------------------------------------- #
# Log-normal
# --------------------------------------------------------------------------- #
def _lognormal_estimate(lx, w=None):
    if w is None:
        mu = lx.mean()
        var = ((lx - mu) ** 2).mean()
    else:
        W = w.sum()
        mu = np.dot(w, lx) / W
        var = np.dot(w, (lx - mu) ** 2) / W
    return mu, math.sqrt(var)


def _lognormal_moments(shift):
    """Indexed estimator on logs centred at ``shift``.

    One pass over the resample indices; centring keeps the raw second
    moment free of cancellation.
    """
    def est(d, idx):
        s1, s2 = kernels.gather_moments(d, idx)
        m = len(idx)
        s1, s2 = s1 / m, s2 / m
        return shift + s1, math.sqrt(max(s2 - s1 * s1, 0.0))
    return est


def fit_lognormal(data, B=DEFAULT_B, seed=0, level=0.95):
    """Closed-form MLE: mean and (biased) standard deviation of the logs."""
    x = _positive(data, 10)
    lx = np.log(x)
    mu, sigma = _lognormal_estimate(lx)
    if not sigma > 0:
        raise DegenerateDataError("zero variance of log data")
    ci_mu = ci_sigma = None
    if B:
        ci_mu, ci_sigma = bca_bootstrap(_lognormal_moments(mu), lx - mu, B=B, seed=seed,
                                        level=level, indexed=True, theta_hat=(mu, sigma))
    return LogNormalFit(mu=float(mu), sigma=float(sigma), ci_mu=ci_mu, ci_sigma=ci_sigma)


# --------------------------------------------------------------------------- #
# Generic numerical MLE
# --------------------------------------------------------------------------- #
def _fd_hessian(grad, theta, h=1e-5):
    p = len(theta)
    H = np.empty((p, p))
    for i in range(p):
        e = np.zeros(p)
        e[i] = h * max(1.0, abs(theta[i]))
        H[:, i] = (grad(theta + e) - grad(theta - e)) / (2 * e[i])
    return 0.5 * (H + H.T)


def _newton_polish(fun, grad, hess, theta, max_iter=60, tol=GRAD_TOL):
    """Newton ascent with backtracking on a mean log-likelihood."""
    f = fun(theta)
    for _ in range(max_iter):
        g = grad(theta)
        if np.linalg.norm(g) < tol:
            return theta, g
        H = hess(theta)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        if np.dot(step, g) <= 0:  # not an ascent direction
            step = g
        t = 1.0
        gn = np.linalg.norm(g)
        while t > 1e-12:
            cand = theta + t * step
            fc = fun(cand)
            # near the optimum f is flat to rounding, so a shrinking gradient also counts
            if np.isfinite(fc) and (fc > f or (fc >= f - 1e-13 * abs(f)
                                               and np.linalg.norm(grad(cand)) < gn)):
                break
            t *= 0.5
        else:
            break
        theta, f = cand, fc
    return theta, grad(theta)


def _maximize(fun, grad, starts, hess=None, what="likelihood", warm=None):
    """Quasi-Newton from each start, Newton polish of the best, strict gradient check.

    With ``warm`` (a nearby solution, e.g. the full-sample estimate for a
    bootstrap replicate) Newton is tried from there first and the
    multistart only runs if it fails to converge.
    """
    hess = hess or (lambda t: _fd_hessian(grad, t))
    if warm is not None:
        theta, g = _newton_polish(fun, grad, hess, np.asarray(warm, dtype=float))
        if np.linalg.norm(g) < GRAD_TOL and np.all(np.isfinite(theta)):
            return theta
    best = None
    for x0 in starts:
        res = optimize.minimize(lambda t: -fun(t), np.asarray(x0, dtype=float),
                                jac=lambda t: -grad(t), method="BFGS",
                                options={"gtol": 1e-10, "maxiter": 1000})
        if np.all(np.isfinite(res.x)) and np.isfinite(res.fun):
            if best is None or res.fun < best.fun:
                best = res
    if best is None:
        raise FitError("%s maximization diverged from every start" % what)
    theta, g = _newton_polish(fun, grad, hess, best.x)
    gnorm = float(np.linalg.norm(g))
    if not gnorm < GRAD_TOL:
        raise FitError("%s maximization did not converge: gradient norm %.3g at %s"
                       % (what, gnorm, np.array2string(theta)))
    return theta


# --------------------------------------------------------------------------- #
# Weibull
# --------------------------------------------------------------------------- #
def _weibull_mle(x, w=None, warm=None):
    w = np.ones_like(x) if w is None else w
    W = w.sum()
    lx = np.log(x)
    m = np.dot(w, lx) / W
    sd = math.sqrt(max(np.dot(w, (lx - m) ** 2) / W, 1e-300))

    def parts(t):
        k, lam = math.exp(t[0]), t[1]
        z = lx - lam
        e = np.exp(np.clip(k * z, -700, 700))
        return k, z, e

    def fun(t):
        k, z, e = parts(t)
        return (math.log(k) - t[1] + (k - 1) * np.dot(w, z) / W - np.dot(w, e) / W)

    def grad(t):
        k, z, e = parts(t)
        return np.array([1.0 + k * np.dot(w, z) / W - k * np.dot(w, z * e) / W,
                         k * (np.dot(w, e) / W - 1.0)])

    k0 = 1.2825 / sd
    starts = [(math.log(k0 * f), m + 0.5772 / (k0 * f)) for f in (1.0, 0.5, 2.0)]
    if warm is not None:
        warm = (math.log(warm[0]), math.log(warm[1]))
    t = _maximize(fun, grad, starts, what="Weibull likelihood", warm=warm)
    return math.exp(t[0]), math.exp(t[1])


def fit_weibull(data, B=DEFAULT_B, seed=0, level=0.95):
    x = _positive(data, 10)
    shape, scale = _weibull_mle(x)
    ci_k = ci_l = None
    if B:
        ci_k, ci_l = bca_bootstrap(lambda v, w: _weibull_mle(v, w, (shape, scale)), x, B=B, seed=seed,
                                   level=level, weighted=True, theta_hat=(shape, scale))
    return WeibullFit(shape=shape, scale=scale, ci_shape=ci_k, ci_scale=ci_l)


# --------------------------------------------------------------------------- #
# Folded Student
# --------------------------------------------------------------------------- #
def _student_mle(x, w=None, warm=None):
    w = np.ones_like(x) if w is None else w
    W = w.sum()

    def fun(t):
        nu, s = math.exp(t[0]), math.exp(t[1])
        z2 = (x / s) ** 2
        return (math.log(2.0) + gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
                - (nu + 1) / 2 * np.dot(w, np.log1p(z2 / nu)) / W - t[1])

    def grad(t):
        nu, s = math.exp(t[0]), math.exp(t[1])
        z2 = (x / s) ** 2
        dnu = (0.5 * digamma((nu + 1) / 2) - 0.5 * digamma(nu / 2) - 0.5 / nu
               - 0.5 * np.dot(w, np.log1p(z2 / nu)) / W
               + (nu + 1) / 2 * np.dot(w, z2 / (nu * nu + nu * z2)) / W)
        ds = -1.0 + (nu + 1) * np.dot(w, z2 / (nu + z2)) / W
        return np.array([nu * dnu, ds])

    med = float(np.median(x))
    starts = [(math.log(nu0), math.log(med / 0.6745)) for nu0 in (1.0, 4.0, 20.0)]
    if warm is not None:
        warm = (math.log(warm[0]), math.log(warm[1]))
    t = _maximize(fun, grad, starts, what="Student likelihood", warm=warm)
    if t[0] > math.log(1e6):
        raise FitError("Student dof diverged (%.3g): data look half-normal" % math.exp(t[0]))
    return math.exp(t[0]), math.exp(t[1])


def fit_student(data, B=DEFAULT_B, seed=0, level=0.95):
    x = _positive(data, 10)
    nu, s = _student_mle(x)
    ci_n = ci_s = None
    if B:
        ci_n, ci_s = bca_bootstrap(lambda v, w: _student_mle(v, w, (nu, s)), x, B=B, seed=seed,
                                   level=level, weighted=True, theta_hat=(nu, s))
    return StudentFit(dof=nu, scale=s, ci_dof=ci_n, ci_scale=ci_s)


# --------------------------------------------------------------------------- #
# Zipf-Mandelbrot (with and without cutoff)
# --------------------------------------------------------------------------- #
@dataclass
class _ZMProblem:
    """Mean log-likelihood in ``(log c, log gamma[, beta])`` on rescaled data."""

    y: np.ndarray
    w: np.ndarray
    with_cutoff: bool
    W: float = field(init=False)

    def __post_init__(self):
        self.W = float(self.w.sum())

    def natural(self, t):
        b = t[2] if self.with_cutoff else 0.0
        return math.exp(t[0]), math.exp(t[1]), b

    def derivs(self, t):
        c, g, b = self.natural(t)
        ll, gn, hn = kernels.zm_derivs(self.y, self.w, c, g, b)
        J = np.array([c, g, 1.0])
        gt = gn * J
        ht = hn * np.outer(J, J)
        ht[0, 0] += gn[0] * c
        ht[1, 1] += gn[1] * g
        p = 3 if self.with_cutoff else 2
        return ll / self.W, gt[:p] / self.W, ht[:p, :p] / self.W

    def fun(self, t):
        c, g, b = self.natural(t)
        if self.with_cutoff and b < 0:
            return -np.inf
        return self.derivs(t)[0]


def _zm_projected_grad(prob, t, g):
    g = g.copy()
    if prob.with_cutoff and t[2] <= 0.0 and g[2] < 0.0:
        g[2] = 0.0
    return g


def _zm_newton(prob, t, max_iter=80):
    """Projected Newton ascent; ``beta`` pinned at zero while it pushes negative."""
    t = np.asarray(t, dtype=float).copy()
    f, g, H = prob.derivs(t)
    for _ in range(max_iter):
        pg = _zm_projected_grad(prob, t, g)
        if np.linalg.norm(pg) < GRAD_TOL:
            return t, pg
        free = np.ones(len(t), dtype=bool)
        if prob.with_cutoff and t[2] <= 0.0 and g[2] < 0.0:
            free[2] = False
        step = np.zeros_like(t)
        Hf = H[np.ix_(free, free)]
        try:
            step[free] = -np.linalg.solve(Hf, g[free])
        except np.linalg.LinAlgError:
            step[free] = g[free]
        if np.dot(step[free], g[free]) <= 0:
            step[free] = g[free]
        s = 1.0
        gn = np.linalg.norm(pg)
        while s > 1e-14:
            cand = t + s * step
            if prob.with_cutoff and cand[2] < 0.0:
                cand[2] = 0.0
            fc, gc, Hc = prob.derivs(cand)
            if np.isfinite(fc) and (fc > f or (fc >= f - 1e-13 * abs(f) and np.linalg.norm(
                    _zm_projected_grad(prob, cand, gc)) < gn)):
                break
            s *= 0.5
        else:
            break
        t, f, g, H = cand, fc, gc, Hc
    return t, _zm_projected_grad(prob, t, g)


def _zm_mle(y, w, with_cutoff, start=None):
    prob = _ZMProblem(y, w, with_cutoff)
    if start is not None:
        t, pg = _zm_newton(prob, start)
        if np.linalg.norm(pg) < GRAD_TOL:
            return t
    best = None
    for c0 in (0.25, 1.0, 4.0):
        g0 = math.log(2.0) / math.log1p(1.0 / c0)
        x0 = [math.log(c0), math.log(g0)] + ([0.01] if with_cutoff else [])
        bounds = [(-30, 30), (-30, 10)] + ([(0.0, None)] if with_cutoff else [])

        def negf(t):
            if not np.all(np.isfinite(t)):
                return np.inf, np.zeros_like(t)
            ll, g, _ = prob.derivs(t)
            return -ll, -g

        res = optimize.minimize(negf, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 2000, "gtol": 1e-12, "ftol": 1e-15})
        if np.all(np.isfinite(res.x)) and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise FitError("Zipf-Mandelbrot likelihood diverged from every start")
    t, pg = _zm_newton(prob, best.x)
    gnorm = float(np.linalg.norm(pg))
    if not gnorm < GRAD_TOL:
        c, g, b = prob.natural(t)
        raise FitError("Zipf-Mandelbrot fit did not converge: gradient norm %.3g at "
                       "c=%.6g gamma=%.6g beta=%.6g (rescaled data)" % (gnorm, c, g, b))
    return t


def fit_zipf_mandelbrot(data, with_cutoff=True, B=DEFAULT_B, seed=0, level=0.95,
                        jackknife_groups=200):
    """MLE of the Zipf-Mandelbrot survival, optionally with exponential cutoff.

    The density is ``F(x) (beta_cut + gamma/(c+x))``. Data are divided by
    their median before optimizing, so ``c`` and ``beta_cut`` come back in
    data units. A cutoff rate pinned at zero is reported via
    ``beta_at_boundary``.
    """
    x = _positive(data, 100)
    scale = float(np.median(x))
    y = x / scale
    ones = np.ones_like(y)
    t = _zm_mle(y, ones, with_cutoff)

    def unpack(tt):
        c = math.exp(tt[0]) * scale
        g = math.exp(tt[1])
        b = float(tt[2] / scale) if with_cutoff else 0.0
        return c, g, b

    c, g, b = unpack(t)
    at_bound = bool(with_cutoff and t[2] <= 0.0)

    cis = [None, None, None]
    if B:
        def estimator(values, w):
            return unpack(_zm_mle(y, w, with_cutoff, start=t))[: 3 if with_cutoff else 2]

        out = bca_bootstrap(estimator, x, B=B, seed=seed, level=level, weighted=True,
                            jackknife_groups=jackknife_groups,
                            theta_hat=(c, g, b)[: 3 if with_cutoff else 2])
        cis[: len(out)] = out
    return ZipfMandelbrotFit(c=c, gamma=g, beta_cut=b, ci_c=cis[0], ci_gamma=cis[1],
                             ci_beta_cut=cis[2], beta_at_boundary=at_bound,
                             with_cutoff=with_cutoff)


# --------------------------------------------------------------------------- #
# Dispatch and reporting
# --------------------------------------------------------------------------- #
def fit(data, family, B=DEFAULT_B, seed=0, **kwargs):
    if family == "pareto":
        return fit_pareto_tail(data, B=B, seed=seed, **kwargs)
    if family == "lognormal":
        return fit_lognormal(data, B=B, seed=seed, **kwargs)
    if family == "weibull":
        return fit_weibull(data, B=B, seed=seed, **kwargs)
    if family == "student":
        return fit_student(data, B=B, seed=seed, **kwargs)
    if family in ("zm", "zm-cutoff"):
        return fit_zipf_mandelbrot(data, with_cutoff=(family == "zm-cutoff"), B=B, seed=seed, **kwargs)
    raise ValueError("unknown family %r" % family)


def fit_report(model, data, seed=0, B=0):
    """JSON-ready ``{family, params, ci, ks, n, seed, B}``."""
    x = np.asarray(data, dtype=float)
    if isinstance(model, ParetoTailFit):
        ks, n = model.ks_distance, model.n_tail
    else:
        ks, n = ks_statistic(x, model), len(x)
    ci = {name: (None if c is None else c.as_list()) for name, c in model.cis().items()}
    report = {"family": family_name(model), "params": dict(model.params), "ci": ci,
              "ks": ks, "n": int(n), "seed": seed, "B": B}
    if isinstance(model, ZipfMandelbrotFit) and model.with_cutoff:
        report["beta_at_boundary"] = model.beta_at_boundary
    return report


def survival_curve(model, data, points=100):
    """Empirical and model survival on a log-spaced grid over the data range."""
    x = np.sort(np.asarray(data, dtype=float))
    grid = np.geomspace(x[0], x[-1], points)
    emp = 1.0 - np.searchsorted(x, grid, side="right") / len(x)
    return grid, emp, np.asarray(model.sf(grid), dtype=float)


def model_from_params(family, params):
    if family in ("zm", "zm-cutoff"):
        return ZipfMandelbrotFit(c=params["c"], gamma=params["gamma"],
                                 beta_cut=params.get("beta_cut", 0.0),
                                 with_cutoff=(family == "zm-cutoff"))
    return FAMILIES[family](**params)
