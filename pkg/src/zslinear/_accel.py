"""Kernel acceleration switch.

Hot numeric loops are compiled with numba when it is importable and the
environment variable ``ZSLINEAR_NO_NUMBA`` is unset (or "0"). Setting
``ZSLINEAR_NO_NUMBA=1`` selects the plain numpy path, which runs the same
kernel bodies uncompiled. The flag is read once at import time.
"""

import os

_disabled = os.environ.get("ZSLINEAR_NO_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        """No-op stand-in for numba.njit."""
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
