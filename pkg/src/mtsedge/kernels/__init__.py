"""Kernel backend dispatch.

Two interchangeable implementations of the hot numeric loops:

* ``loops.py`` compiled with numba ``@njit`` (default when numba imports),
* ``vector.py`` pure vectorized numpy.

Selection happens once at import time from the MTSEDGE_BACKEND environment
variable: "numba", "numpy", or "auto" (default). Both paths stay importable
for parity tests and the benchmark regardless of the active choice.
"""

import os

from ..errors import ConfigError
from . import loops, vector

_KERNEL_NAMES = (
    "conv_fwd",
    "conv_bwd_x",
    "conv_bwd_k",
    "pool_fwd",
    "pool_bwd",
    "zhang_suen",
    "greedy_match",
)

_jitted = None


def jit_kernels():
    """Compile (lazily, once) and return the njit-wrapped loop kernels."""
    global _jitted
    if _jitted is None:
        from numba import njit
        _jitted = {name: njit(cache=True)(getattr(loops, name))
                   for name in _KERNEL_NAMES}
    return _jitted


def _numba_available():
    try:
        import numba  # noqa: F401
        return True
    except ImportError:
        return False


def _pick_backend():
    req = os.environ.get("MTSEDGE_BACKEND", "auto").strip().lower() or "auto"
    if req == "auto":
        return "numba" if _numba_available() else "numpy"
    if req == "numpy":
        return "numpy"
    if req == "numba":
        if not _numba_available():
            raise ConfigError("MTSEDGE_BACKEND=numba but numba is not importable")
        return "numba"
    raise ConfigError(f"unknown MTSEDGE_BACKEND value: {req!r}")


BACKEND = _pick_backend()

if BACKEND == "numba":
    _active = jit_kernels()
else:
    _active = {name: getattr(vector, name) for name in _KERNEL_NAMES}

conv_fwd = _active["conv_fwd"]
conv_bwd_x = _active["conv_bwd_x"]
conv_bwd_k = _active["conv_bwd_k"]
pool_fwd = _active["pool_fwd"]
pool_bwd = _active["pool_bwd"]
zhang_suen = _active["zhang_suen"]
greedy_match = _active["greedy_match"]
