"""Hot-kernel backend selection.

The compiled Cython extension is preferred; the vectorized numpy twin is
the fallback. Set ``MVSCENE_KERNELS=numpy`` (or ``native``) to force a
backend; ``native`` raises if the extension is unavailable. Benchmarks
import ``_numpy`` / ``_native`` directly to time both in one process.
"""

import logging
import os

from . import _numpy

logger = logging.getLogger(__name__)

_requested = os.environ.get("MVSCENE_KERNELS", "auto")
if _requested not in ("auto", "native", "numpy"):
    raise ImportError(f"MVSCENE_KERNELS must be auto|native|numpy, got {_requested!r}")

_impl = None
if _requested in ("auto", "native"):
    try:
        from . import _native as _impl
    except ImportError:
        if _requested == "native":
            raise
        logger.debug("compiled kernels unavailable, using numpy fallback")
if _impl is None:
    _impl = _numpy

BACKEND = _impl.BACKEND
score_candidates = _impl.score_candidates
splat_points = _impl.splat_points

__all__ = ["BACKEND", "score_candidates", "splat_points"]
