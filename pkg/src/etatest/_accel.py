"""Kernel acceleration switch.

Hot kernels are numba-compiled by default. Setting the environment variable
``ETATEST_DISABLE_NUMBA=1`` before import makes ``njit`` a no-op so the same
source runs as plain numpy/Python (slower, but dependency- and JIT-free).
"""

import os

NUMBA_ENABLED = os.environ.get("ETATEST_DISABLE_NUMBA", "") != "1"

if NUMBA_ENABLED:
    from numba import njit
else:

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap
