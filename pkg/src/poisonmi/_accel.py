"""Backend selection for the compiled kernels.

Set ``POISONMI_DISABLE_NUMBA=1`` (or numba's own ``NUMBA_DISABLE_JIT=1``) to
force the pure-numpy path.
"""
import os

_DISABLED = os.environ.get("POISONMI_DISABLE_NUMBA", "0") == "1" or os.environ.get(
    "NUMBA_DISABLE_JIT", "0"
) == "1"

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
