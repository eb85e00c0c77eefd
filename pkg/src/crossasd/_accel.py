"""Optional numba acceleration.

Set ``CROSSASD_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""
import os

try:
    from numba import njit as _njit
    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover
    NUMBA_INSTALLED = False

_FLAG = os.environ.get("CROSSASD_DISABLE_NUMBA", "").strip().lower()
USE_NUMBA = NUMBA_INSTALLED and _FLAG not in ("1", "true", "yes", "on")


def optional_njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise.

    The undecorated function is kept as ``.py_func`` in both cases so tests can
    exercise the loop body without compilation.
    """

    def decorator(func):
        if NUMBA_INSTALLED:
            return _njit(*args, **kwargs)(func)
        func.py_func = func
        return func

    return decorator
