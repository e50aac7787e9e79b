"""Optional numba acceleration.

Set ``DIGSIB_NUMBA=0`` in the environment to run every kernel as plain
Python/numpy. The flag is read once, at import time.
"""

import os

_FLAG = os.environ.get("DIGSIB_NUMBA", "1").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional accelerator
    numba = None

USING_NUMBA = numba is not None and _FLAG not in ("0", "false", "off", "no")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is enabled, else return it unchanged."""
    if not USING_NUMBA:
        return fn
    return numba.njit(cache=True)(fn)


def backend_name():
    return "numba" if USING_NUMBA else "numpy"
