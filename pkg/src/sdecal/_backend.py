"""Numba/numpy backend switch.

Set ``SDECAL_BACKEND=numpy`` to bypass every compiled kernel and run the
pure-numpy reference path. Any other value (or unset) uses numba when it
is importable.
"""

from __future__ import annotations

import functools
import os

try:
    import numba

    NUMBA_OK = True
    # Default layer selection probes TBB first and warns when it is too old.
    # Orchestration is single-threaded, so the portable workqueue layer suffices.
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba = None
    NUMBA_OK = False

BACKEND_ENV = "SDECAL_BACKEND"
THREADS_ENV = "SDECAL_THREADS"


def use_numba() -> bool:
    return NUMBA_OK and os.environ.get(BACKEND_ENV, "numba").lower() != "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if NUMBA_OK:
        return numba.njit(*args, **kwargs)

    def deco(f):
        @functools.wraps(f)
        def wrapper(*a, **kw):
            return f(*a, **kw)

        return wrapper

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return deco(args[0])
    return deco


prange = numba.prange if NUMBA_OK else range


def max_threads() -> int:
    if not NUMBA_OK:
        return 1
    return int(numba.config.NUMBA_NUM_THREADS)


def set_threads(n: int | None) -> int:
    """Set the inner-loop thread count; returns the count actually used.

    ``SDECAL_THREADS`` overrides ``n`` when set.
    """
    env = os.environ.get(THREADS_ENV)
    if env:
        n = int(env)
    if not NUMBA_OK or n is None:
        return 1
    n = max(1, min(int(n), max_threads()))
    numba.set_num_threads(n)
    return n
