"""Kernel backend selection.

The compiled extension is used when importable; set ``CME_MTLED_BACKEND=python``
to force the NumPy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

try:  # pragma: no cover - depends on the build
    from . import _kernels as compiled
except ImportError:
    compiled = None

if os.environ.get("CME_MTLED_BACKEND", "").lower() == "python" or compiled is None:
    kernels = _fallback
else:
    kernels = compiled

NAME = kernels.NAME
