"""Backend switch for the compiled kernels.

Set ``UNIFIED_LATENTS_NUMBA=0`` to force the pure-numpy path. The flag is read
once at import time; tests that compare backends call the kernels directly.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("UNIFIED_LATENTS_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)

    def wrap(fn):
        if not HAVE_NUMBA:
            return fn
        return numba.njit(**kwargs)(fn)

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
