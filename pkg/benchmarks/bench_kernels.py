"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are called on identical inputs and their outputs are checked
for agreement before any timing is reported.
"""

import argparse
import timeit

import numpy as np

from costfolio import _pykernels
from costfolio.tailfit import _pareto_candidates

try:
    from costfolio import _ckernels
except ImportError:
    _ckernels = None


def pareto_case(n=100_000, gamma=2.33, seed=0):
    rng = np.random.default_rng(seed)
    x = (1.0 - rng.random(n)) ** (-1.0 / (gamma - 1.0))
    uniq, counts = np.unique(x, return_counts=True)
    cands = _pareto_candidates(counts, 50, 256)
    return (np.log(uniq), counts.astype(float), cands, 50.0, -1)


def loess_case(n=20_000, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 20, n))
    y = 0.7 * x + rng.normal(0, 0.7, n)
    xq = np.linspace(x[0], x[-1], 2000)
    return (x, y, np.ones(n), int(0.3 * n), xq)


def zm_case(n=50_000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.pareto(1.0, n) + 0.1
    return (x, np.ones(n), 1.0, 0.97, 1e-3)


def gather_case(n=100_000, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.normal(0.0, 2.87, n), rng.integers(0, n, n))


CASES = {
    "pareto_scan": pareto_case,
    "loess_eval": loess_case,
    "zm_derivs": zm_case,
    "gather_moments": gather_case,
}


def _agree(a, b):
    fa = np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in a])
    fb = np.concatenate([np.ravel(np.asarray(v, dtype=float)) for v in b])
    return np.allclose(fa, fb, rtol=1e-9, atol=1e-12, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; only the fallback is available")
    print("%-14s %12s %12s %9s" % ("kernel", "numpy [ms]", "cython [ms]", "speedup"))
    for name, make in CASES.items():
        inputs = make()
        py = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print("%-14s %12.2f %12s %9s" % (name, t_py, "-", "-"))
            continue
        cy = getattr(_ckernels, name)
        if not _agree(py(*inputs), cy(*inputs)):
            raise SystemExit("%s: backends disagree" % name)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        print("%-14s %12.2f %12.2f %8.1fx" % (name, t_py, t_cy, t_py / t_cy))


if __name__ == "__main__":
    main()
