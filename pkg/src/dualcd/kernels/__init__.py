"""Hot loops with a compiled implementation and a NumPy fallback.

The compiled extension is used when it was built and ``DUALCD_PURE_PYTHON``
is not set; ``BACKEND`` names the active implementation.
"""
from __future__ import annotations

import os

from . import _fallback

fallback = _fallback
compiled = None
if not os.environ.get("DUALCD_PURE_PYTHON"):
    try:
        from . import _doa as compiled
    except ImportError:
        compiled = None

_active = compiled if compiled is not None else _fallback
BACKEND = "cython" if compiled is not None else "numpy"
doa_pair_histogram = _active.doa_pair_histogram

__all__ = ["BACKEND", "compiled", "doa_pair_histogram", "fallback"]
