"""Numba switch.

Set ``BF_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging and for benchmarking the two paths against each other).
"""

import os

USE_NUMBA = os.environ.get("BF_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dependency in practice
        USE_NUMBA = False

if not USE_NUMBA:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def pick(numba_impl, numpy_impl):
    """Return the numba kernel when enabled, else the numpy fallback."""
    return numba_impl if USE_NUMBA else numpy_impl
