"""Numba switch.

Kernels are compiled with numba unless the environment variable
``MBRLKIT_DISABLE_NUMBA`` is set to a truthy value or numba cannot be
imported, in which case the pure-numpy implementations are used.
"""

from __future__ import annotations

import os

_FLAG = "MBRLKIT_DISABLE_NUMBA"


def _disabled_by_env() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("", "0", "false", "no")


try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _njit = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def njit(fn):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Compiles regardless of ``USE_NUMBA`` so both paths stay reachable for
    tests and benchmarks; dispatch happens at the call site.
    """
    if _njit is None:  # pragma: no cover
        return fn
    return _njit(cache=True)(fn)
