"""Backend selection for the hot kernels.

Numba is used when importable unless ``DIVERSE_SELFTRAIN_DISABLE_NUMBA`` is
set to a truthy value, in which case every kernel runs its pure-numpy path.
The flag is read once at import time.
"""
import os

_FLAG = "DIVERSE_SELFTRAIN_DISABLE_NUMBA"


def _disabled_by_env():
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _disabled_by_env():
        raise ImportError("numba disabled by environment")
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    _njit = None
    NUMBA_ENABLED = False


def maybe_njit(fn):
    """Compile ``fn`` with ``numba.njit(cache=True)`` when numba is active.

    Returns ``None`` otherwise so callers can fall back explicitly.
    """
    if not NUMBA_ENABLED:
        return None
    return _njit(cache=True)(fn)


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
