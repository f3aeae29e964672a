"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_npkernels``. Set ``STCAE_BACKEND=numpy`` to force
the fallback.
"""

import logging
import os

from stcae import _npkernels

log = logging.getLogger(__name__)

_forced = os.environ.get("STCAE_BACKEND", "").strip().lower()

if _forced == "numpy":
    kernels = _npkernels
    name = "numpy"
else:
    try:
        from stcae import _ckernels as kernels
        name = "cython"
    except ImportError:  # extension not built
        if _forced == "cython":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        kernels = _npkernels
        name = "numpy"

_threads = 1


def set_threads(n):
    """Worker threads used by the compiled kernels (results do not depend on it)."""
    global _threads
    if n < 1:
        raise ValueError(f"threads must be >= 1, got {n}")
    _threads = int(n)


def get_threads():
    return _threads
