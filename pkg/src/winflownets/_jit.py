"""JIT switch for the hot kernels.

Kernels are written in the numpy subset numba understands, so the same source
runs compiled or as plain numpy. Set ``WINFLOWNETS_JIT=0`` (or numba's own
``NUMBA_DISABLE_JIT=1``) to force the pure-numpy path.
"""

import os

JIT_ENABLED = os.environ.get("WINFLOWNETS_JIT", "1").lower() not in ("0", "false", "no", "off")

try:
    import numba as nb
except ImportError:  # pragma: no cover
    nb = None
    JIT_ENABLED = False


def njit(*args, **kwargs):
    kwargs.setdefault("cache", True)
    if JIT_ENABLED:
        if args and callable(args[0]):
            return nb.njit(**kwargs)(args[0])
        return nb.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda func: func
