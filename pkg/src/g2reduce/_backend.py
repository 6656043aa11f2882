"""Backend selection for the hot kernels.

The environment variable G2REDUCE_BACKEND picks the implementation of the
batched matrix/stencil kernels:

    G2REDUCE_BACKEND=numba   jit-compiled loops (default when numba imports)
    G2REDUCE_BACKEND=numpy   pure vectorized numpy

Both paths produce identical results; the numba path only changes speed.
"""

import os

_REQUESTED = os.environ.get("G2REDUCE_BACKEND", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

if _REQUESTED == "numpy":
    USE_NUMBA = False
elif _REQUESTED == "numba":
    if not HAVE_NUMBA:
        raise ImportError("G2REDUCE_BACKEND=numba requested but numba is not importable")
    USE_NUMBA = True
elif _REQUESTED == "":
    USE_NUMBA = HAVE_NUMBA
else:
    raise ValueError(f"unknown G2REDUCE_BACKEND={_REQUESTED!r} (expected 'numba' or 'numpy')")


def backend_name():
    return "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """numba.njit when active, identity decorator otherwise."""
    if USE_NUMBA:
        return numba.njit(*args, cache=True, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap
