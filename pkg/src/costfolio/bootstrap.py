"""Bias-corrected and accelerated (BCa) bootstrap intervals.

Replicate ``b`` is drawn from ``numpy.random.default_rng([seed, b])`` so a
run is bit-identical whatever the number of worker threads.

References
----------
B. Efron and R. Tibshirani, *An Introduction to the Bootstrap*, 1993, ch. 14.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .kernels import thread_count

DEFAULT_B = 1999


class BootstrapError(RuntimeError):
    """Too many resamples on which the estimator failed."""


@dataclass(frozen=True)
class BootstrapCI:
    lower: float
    upper: float
    level: float = 0.95
    replicates: int = DEFAULT_B
    method: str = "BCa"
    z0: float = 0.0
    acceleration: float = 0.0
    standard_error: float = float("nan")
    failures: int = 0

    def contains(self, value):
        return self.lower <= value <= self.upper

    def as_list(self):
        return [self.lower, self.upper]


def resample_indices(n, seed, b):
    rng = np.random.default_rng([int(seed), int(b)])
    return rng.integers(0, n, n)


def _call(estimator, data, idx, weighted, indexed=False):
    if indexed:
        return estimator(data, idx)
    if weighted:
        w = np.bincount(idx, minlength=len(data)).astype(float)
        return estimator(data, w)
    return estimator(data[idx])


def _safe(fn):
    try:
        val = np.atleast_1d(np.asarray(fn(), dtype=float))
    except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(val)):
        return None
    return val


def jackknife_values(estimator, data, weighted=False, max_groups=200, indexed=False):
    """Delete-one (or delete-group when ``n > max_groups``) jackknife values.

    Groups are ``i % max_groups`` so every group is a spread-out slice of
    the sample rather than a contiguous block.
    """
    data = np.asarray(data)
    n = len(data)
    groups = n if n <= max_groups else max_groups
    labels = np.arange(n) % groups
    out = []
    for g in range(groups):
        keep = labels != g
        if indexed:
            vals = _safe(lambda: estimator(data, np.flatnonzero(keep)))
        elif weighted:
            vals = _safe(lambda: estimator(data, keep.astype(float)))
        else:
            vals = _safe(lambda: estimator(data[keep]))
        if vals is not None:
            out.append(vals)
    if len(out) < 2:
        raise BootstrapError("jackknife failed on all but %d groups" % len(out))
    return np.vstack(out)


def acceleration(jack):
    """Acceleration constant from jackknife values (one column per parameter)."""
    jack = np.atleast_2d(np.asarray(jack, dtype=float))
    if jack.shape[0] == 1:
        jack = jack.T
    d = jack.mean(axis=0) - jack
    num = (d**3).sum(axis=0)
    den = 6.0 * (d**2).sum(axis=0) ** 1.5
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(den > 0, num / den, 0.0)
    return a


def bca_interval(theta_hat, replicates, accel, level=0.95):
    """BCa endpoints for one parameter given its bootstrap replicates."""
    reps = np.sort(np.asarray(replicates, dtype=float))
    B = len(reps)
    below = np.searchsorted(reps, theta_hat, side="left")
    ties = np.searchsorted(reps, theta_hat, side="right") - below
    p0 = (below + 0.5 * ties) / B
    p0 = min(max(p0, 0.5 / B), 1.0 - 0.5 / B)
    z0 = float(ndtri(p0))
    alpha = (1.0 - level) / 2.0
    ends = []
    for za in (ndtri(alpha), ndtri(1.0 - alpha)):
        s = z0 + za
        ends.append(float(ndtr(z0 + s / (1.0 - accel * s))))
    lo, hi = np.quantile(reps, ends)
    return float(lo), float(hi), z0


def bca_bootstrap(estimator, data, B=DEFAULT_B, seed=0, level=0.95, weighted=False,
                  jackknife_groups=200, theta_hat=None, max_failure=0.01, indexed=False):
    """BCa confidence interval(s) for ``estimator(data)``.

    Parameters
    ----------
    estimator : callable
        ``estimator(sample) -> float or array``. With ``weighted=True`` it is
        called as ``estimator(data, weights)`` where ``weights`` are the
        resample multiplicities, which lets sort-heavy estimators skip the
        resort. With ``indexed=True`` it is called as ``estimator(data, idx)``
        with the int64 resample indices, for estimators that can gather
        without allocating the resample.
    data : array_like
        Observations along axis 0.
    B : int
        Number of bootstrap replicates (at least 200).
    seed : int
        Replicate ``b`` uses ``default_rng([seed, b])``.
    level : float
        Two-sided coverage.

    Returns
    -------
    BootstrapCI or list of BootstrapCI
        A list when the estimator is vector-valued.
    """
    if B < 200:
        raise ValueError("B must be at least 200 for BCa intervals")
    data = np.asarray(data)
    n = len(data)
    if n < 2:
        raise ValueError("need at least two observations")

    if theta_hat is None:
        if indexed:
            theta_hat = estimator(data, np.arange(n))
        elif weighted:
            theta_hat = estimator(data, np.ones(n))
        else:
            theta_hat = estimator(data)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))

    def one(b):
        idx = resample_indices(n, seed, b)
        return _safe(lambda: _call(estimator, data, idx, weighted, indexed))

    threads = thread_count()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]

    good = [r for r in results if r is not None]
    failures = B - len(good)
    if failures > max_failure * B:
        raise BootstrapError(
            "estimator failed on %d of %d resamples" % (failures, B))
    reps = np.vstack(good)

    jack = jackknife_values(estimator, data, weighted=weighted,
                            max_groups=jackknife_groups, indexed=indexed)
    accel = acceleration(jack)

    cis = []
    for j in range(len(theta_hat)):
        lo, hi, z0 = bca_interval(theta_hat[j], reps[:, j], accel[j], level)
        cis.append(BootstrapCI(
            lower=lo, upper=hi, level=level, replicates=B, z0=z0,
            acceleration=float(accel[j]), standard_error=float(reps[:, j].std(ddof=1)),
            failures=failures))
    return cis[0] if len(cis) == 1 else cis
