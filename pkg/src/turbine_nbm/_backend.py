"""Kernel backend selection.

Hot loops (split scans, tree routing, neighbour scans, AR(1) filtering) are
written twice: a numba ``@njit`` version and a vectorised numpy version. Both
produce bit-identical results; the backend only changes speed.

Set ``TURBINE_NBM_BACKEND=numpy`` to force the pure-numpy path. The default is
``numba`` when it can be imported.
"""

import os
import warnings

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

ENV_VAR = "TURBINE_NBM_BACKEND"
BACKENDS = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get(ENV_VAR, "").strip().lower()
    if requested in ("", "numba"):
        if HAVE_NUMBA:
            return "numba"
        if requested == "numba":
            warnings.warn("numba requested but not importable; using numpy kernels")
        return "numpy"
    if requested == "numpy":
        return "numpy"
    raise ValueError(f"{ENV_VAR} must be one of {BACKENDS}, got {requested!r}")


_backend = _initial_backend()


def get_backend():
    return _backend


def set_backend(name):
    """Switch kernels at runtime (tests and benchmarks). Returns the old value."""
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    old, _backend = _backend, name
    return old


def use_numba():
    return _backend == "numba"


def njit(*args, **kwargs):
    """``numba.njit(cache=True, nogil=True)`` or a no-op without numba."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f
