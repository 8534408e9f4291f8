"""Kernel backend selection.

The compiled extension is used when it was built; set ``MADISPATCH_PURE_PYTHON=1``
to force the pure-Python fallback.  Both backends produce bit-identical output.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("MADISPATCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def fifo_departures(arrivals, services, busy_until=0.0, impl=None):
    impl = impl or _impl
    arrivals = np.ascontiguousarray(arrivals, dtype=np.float64)
    services = np.ascontiguousarray(services, dtype=np.float64)
    if arrivals.shape != services.shape:
        raise ValueError("arrivals and services differ in length")
    return impl.fifo_departures(arrivals, services, float(busy_until))


def gae(rewards, values, next_values, episode_end, gamma, lam, impl=None):
    impl = impl or _impl
    return impl.gae(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(next_values, dtype=np.float64),
        np.ascontiguousarray(episode_end, dtype=np.uint8),
        float(gamma), float(lam),
    )
