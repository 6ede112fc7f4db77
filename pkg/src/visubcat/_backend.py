"""Kernel backend selection.

Hot loops ship in two flavours: numba-compiled scalar loops and vectorised
numpy code. Numba is used when importable unless ``VISUBCAT_DISABLE_NUMBA``
is set to a truthy value; ``set_backend`` switches at runtime (tests and the
benchmark use it to exercise both paths).
"""
import os

_TRUTHY = {"1", "true", "yes", "on"}

try:
    if os.environ.get("VISUBCAT_DISABLE_NUMBA", "").strip().lower() in _TRUTHY:
        raise ImportError("numba disabled by VISUBCAT_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

_current = "numba" if HAVE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` with numba when available, else return it untouched."""
    if HAVE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def backend():
    return _current


def set_backend(name):
    global _current
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable")
    _current = name


def available_backends():
    return ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
