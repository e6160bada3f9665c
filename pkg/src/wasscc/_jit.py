"""Numba switch.

Kernels in :mod:`wasscc.kernels` come in two flavours: an ``@njit`` version and
a pure-numpy version. ``WASSCC_DISABLE_JIT=1`` routes every public call to the
numpy path; the jitted versions stay importable so both can be benchmarked in
the same process.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("WASSCC_DISABLE_JIT", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or a no-op when numba is missing."""
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)


def thread_count():
    """Worker cap from ``WASSCC_THREADS`` (default: CPU count)."""
    raw = os.environ.get("WASSCC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return os.cpu_count() or 1
