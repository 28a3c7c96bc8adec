"""Numba dispatch.

Kernels in :mod:`psbr.kernels` are written as plain Python over numpy arrays.
When numba is importable and ``PSBR_DISABLE_NUMBA`` is unset (or ``0``), they
are compiled with ``numba.njit``; otherwise the pure-numpy path runs as-is.
Both paths consume identical inputs and perform identical float operations,
so results agree bit for bit.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("PSBR_DISABLE_NUMBA", "0").strip().lower()
DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def jit(func):
    """Compile ``func`` with numba when enabled, else return it unchanged."""
    if HAVE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
