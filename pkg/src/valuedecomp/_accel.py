"""Numba switch.

Kernels are compiled with ``numba.njit`` unless the environment variable
``VALUEDECOMP_DISABLE_NUMBA`` is set to a truthy value (or numba is missing),
in which case the pure-numpy implementations are used instead.
"""

import os

_FLAG = "VALUEDECOMP_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in {"1", "true", "yes", "on"}


try:
    if not _numba_requested():
        raise ImportError("disabled by " + _FLAG)
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    _njit = None
    NUMBA_ENABLED = False


def jit(func):
    """Compile ``func`` in nopython mode when numba is active; otherwise return None."""
    if _njit is None:
        return None
    return _njit(cache=True, nogil=True, fastmath=False)(func)
