"""Distribution of the wealth fraction moved per trade, ``Q = T / P_v``.

Given the turnover-wealth law ``log T = a + beta log P_v + xi X`` with
``X ~ N(0, 1)``, the density and CDF of ``Q`` are integrals over the
account-value distribution, evaluated here in ``u = log p_v``:

    p_Q(q) = int phi((log q + (1-beta) u - a)/xi) / (xi q) f_U(u) du
    F_Q(q) = int Phi((log q + (1-beta) u - a)/xi) f_U(u) du

For log-normal account values both reduce to a log-normal law.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import log_ndtr, ndtr

from .tailfit import LogNormalFit

EPSABS = 1e-9
LOG_DROP = 46.0  # integrand mass below exp(-46) of the peak is ignored
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


class QuadratureError(RuntimeError):
    pass


class DivergentIntegralError(ValueError):
    pass


@dataclass(frozen=True)
class Regime:
    a: float
    beta: float
    xi: float

    def __post_init__(self):
        if not 0 <= self.beta <= 1:
            raise ValueError("regime slope beta must lie in [0, 1], got %r" % self.beta)
        if not self.xi > 0:
            raise ValueError("regime noise xi must be positive, got %r" % self.xi)


@dataclass(frozen=True)
class TurnoverWealthModel:
    """One or two regimes; the second applies when ``log P_v >= theta``."""

    regimes: Tuple[Regime, ...]
    theta: Optional[float] = None

    def __post_init__(self):
        if len(self.regimes) not in (1, 2):
            raise ValueError("one or two regimes are supported")
        if len(self.regimes) == 2 and self.theta is None:
            raise ValueError("two regimes need a boundary theta")
        if len(self.regimes) == 1 and self.theta is not None:
            raise ValueError("a single regime takes no boundary")

    @classmethod
    def single(cls, a, beta, xi):
        return cls((Regime(a, beta, xi),))

    @classmethod
    def bilinear(cls, lower, upper, theta):
        return cls((Regime(*lower), Regime(*upper)), float(theta))

    def pieces(self, lo, hi):
        """``(regime, u_lo, u_hi)`` for every regime overlapping ``[lo, hi]``."""
        if len(self.regimes) == 1:
            return [(self.regimes[0], lo, hi)]
        out = []
        if lo < self.theta:
            out.append((self.regimes[0], lo, min(hi, self.theta)))
        if hi > self.theta:
            out.append((self.regimes[1], max(lo, self.theta), hi))
        return out


@dataclass(frozen=True)
class QModel:
    """Log-normal law of ``Q``: ``log Q ~ N(M, S^2)``."""

    M: float
    S: float

    def cdf(self, q):
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore"):
            z = (np.log(q) - self.M) / self.S
        return ndtr(z)

    def pdf(self, q):
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (np.log(q) - self.M) / self.S
            out = np.exp(-0.5 * z * z - _LOG_SQRT_2PI) / (self.S * q)
        return np.where(q > 0, out, 0.0)

    def moment(self, n):
        return math.exp(n * self.M + 0.5 * n * n * self.S ** 2)


# --------------------------------------------------------------------------- #
# Integration window over u = log p_v
# --------------------------------------------------------------------------- #
def _log_density_u(pv_dist, u):
    """Log density of ``U = log P_v``."""
    if isinstance(pv_dist, LogNormalFit):
        z = (u - pv_dist.mu) / pv_dist.sigma
        return -0.5 * z * z - math.log(pv_dist.sigma) - _LOG_SQRT_2PI
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = pv_dist.logpdf(np.exp(u)) + u
    return np.where(np.isfinite(out), out, -np.inf)


def _support(pv_dist):
    with np.errstate(divide="ignore", over="ignore"):
        lo = float(np.log(pv_dist.ppf(1e-300 if isinstance(pv_dist, LogNormalFit) else 0.0)))
        hi = float(np.log(pv_dist.isf(1e-300)))
    if not np.isfinite(hi):
        hi = 700.0
    if not np.isfinite(lo):
        lo = hi - 800.0
    return lo, hi


def _window(logf, lo, hi, points=4001, rounds=3):
    """Sub-interval of ``[lo, hi]`` outside which ``logf`` is below its max minus LOG_DROP."""
    for _ in range(rounds):
        u = np.linspace(lo, hi, points)
        v = logf(u)
        top = np.max(v)
        if not np.isfinite(top):
            raise QuadratureError("integrand vanishes on the whole support")
        keep = np.flatnonzero(v >= top - LOG_DROP)
        new_lo = u[max(keep[0] - 1, 0)]
        new_hi = u[min(keep[-1] + 1, points - 1)]
        if new_hi - new_lo > 0.5 * (hi - lo):
            return new_lo, new_hi
        lo, hi = new_lo, new_hi
    return lo, hi


def _pv_window(pv_dist, tilt=0.0):
    lo, hi = _support(pv_dist)
    return _window(lambda u: _log_density_u(pv_dist, u) - tilt * u, lo, hi)


def _integrate(fun, lo, hi, points=()):
    inner = sorted({float(p) for p in points if lo < p < hi})
    res, err, info = quad_vec(fun, lo, hi, epsabs=EPSABS, epsrel=1e-12, norm="max",
                              points=inner or None, full_output=True, limit=20000)
    if not info.success and err > EPSABS * 10:
        raise QuadratureError("quadrature did not converge: achieved %.3g" % err)
    return res


def _regime_mass(pv_dist, model, regime_index):
    if len(model.regimes) == 1:
        return 1.0
    cut = float(pv_dist.cdf(math.exp(model.theta))) if model.theta < 700 else 1.0
    return cut if regime_index == 0 else 1.0 - cut


def _q_integral(q, model, pv_dist, kind):
    q = np.asarray(q, dtype=float)
    scalar = q.ndim == 0
    qv = np.atleast_1d(q).ravel()
    if np.any(qv <= 0):
        raise ValueError("q must be positive")
    logq = np.log(qv)
    lo, hi = _pv_window(pv_dist)
    total = np.zeros_like(qv)
    for idx, (reg, a, b) in enumerate(model.pieces(lo, hi)):
        if b <= a:
            continue
        z0 = (logq - reg.a) / reg.xi
        if reg.beta == 1.0:
            mass = _regime_mass(pv_dist, model, idx)
            if kind == "pdf":
                total += mass * np.exp(-0.5 * z0 * z0 - _LOG_SQRT_2PI) / (reg.xi * qv)
            else:
                total += mass * ndtr(z0)
            continue
        c = (1.0 - reg.beta) / reg.xi

        if kind == "pdf":
            def fun(u, z0=z0, c=c, xi=reg.xi):
                z = z0 + c * u
                return np.exp(-0.5 * z * z - _LOG_SQRT_2PI + _log_density_u(pv_dist, u)) / (xi * qv)
        else:
            def fun(u, z0=z0, c=c):
                return np.exp(log_ndtr(z0 + c * u) + _log_density_u(pv_dist, u))

        peaks = list(-z0 / c) if len(qv) <= 16 else list(np.quantile(-z0 / c, [0, 0.25, 0.5, 0.75, 1]))
        total += _integrate(fun, a, b, peaks)
    out = total.reshape(q.shape) if not scalar else float(total[0])
    return out


def q_pdf(q, model, pv_dist):
    """Density of ``Q`` at ``q`` (scalar or array) by adaptive quadrature in log p_v."""
    return _q_integral(q, model, pv_dist, "pdf")


def q_cdf(q, model, pv_dist):
    """CDF of ``Q`` at ``q`` (scalar or array) by adaptive quadrature in log p_v."""
    out = _q_integral(q, model, pv_dist, "cdf")
    return np.clip(out, 0.0, 1.0) if isinstance(out, np.ndarray) else min(max(out, 0.0), 1.0)


def q_moment(n, model, pv_dist):
    """``E(Q^n) = sum over regimes of exp(n a + n^2 xi^2 / 2) E(P_v^{-n(1-beta)}; regime)``."""
    if n == 0:
        return 1.0
    if n < 0:
        raise ValueError("moment order must be non-negative")
    lo0, hi0 = _support(pv_dist)
    total = 0.0
    for idx, reg in enumerate(model.regimes):
        s = n * (1.0 - reg.beta)
        factor = math.exp(n * reg.a + 0.5 * n * n * reg.xi ** 2)
        if s == 0:
            total += factor * _regime_mass(pv_dist, model, idx)
            continue
        if not pv_dist.neg_moment_finite(s):
            raise DivergentIntegralError(
                "E(P_v^-%.4g) diverges for the %s account-value law" % (s, pv_dist.family))
        lo, hi = _window(lambda u, s=s: _log_density_u(pv_dist, u) - s * u, lo0, hi0)
        for j, (r, a, b) in enumerate(model.pieces(lo, hi)):
            if r is not reg or b <= a:
                continue
            val = _integrate(lambda u, s=s: np.exp(_log_density_u(pv_dist, u) - s * u), a, b)
            total += factor * float(np.asarray(val).ravel()[0])
    return total


def closed_form_q(model, mu, sigma):
    """Log-normal law of ``Q`` for one regime and log-normal account values."""
    if len(model.regimes) != 1:
        raise ValueError("closed form needs a single-regime model")
    r = model.regimes[0]
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return QModel(M=r.a - (1.0 - r.beta) * mu,
                  S=math.sqrt(r.xi ** 2 + (1.0 - r.beta) ** 2 * sigma ** 2))


def bilinear_q_cdf(q, model, pv):
    """CDF of ``Q`` for a two-regime law and log-normal account values.

    Each regime contributes its log-normal kernel integrated over the part
    of the account-value distribution on its side of ``theta``, which is
    the mixture of the two truncated closed forms.
    """
    if len(model.regimes) != 2:
        raise ValueError("bilinear CDF needs a two-regime model")
    if not isinstance(pv, LogNormalFit):
        raise TypeError("bilinear CDF needs log-normal account values")
    return q_cdf(q, model, pv)


def sample_q(qmodel, n, seed):
    """Draws ``exp(M + S X)``, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    return np.exp(qmodel.M + qmodel.S * rng.standard_normal(int(n)))


def q_sample_report(draws):
    d = np.asarray(draws, dtype=float)
    return {"n": int(len(d)), "fraction_above_one": float(np.mean(d > 1.0)) if len(d) else 0.0,
            "log_mean": float(np.mean(np.log(d))) if len(d) else float("nan"),
            "log_sd": float(np.std(np.log(d))) if len(d) else float("nan")}
