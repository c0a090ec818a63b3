"""Kernel selection: compiled extension when built, numpy fallback otherwise.

Set ``COSTFOLIO_PURE_PYTHON=1`` to force the fallback (used by the
benchmark and the kernel-parity tests).
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("COSTFOLIO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

pareto_scan = _impl.pareto_scan
loess_eval = _impl.loess_eval
zm_derivs = _impl.zm_derivs
gather_moments = _impl.gather_moments


def thread_count():
    """Worker threads for embarrassingly parallel loops (``COSTFOLIO_THREADS``)."""
    try:
        return max(1, int(os.environ.get("COSTFOLIO_THREADS", "1")))
    except ValueError:
        return 1
