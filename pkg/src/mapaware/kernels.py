"""Backend selection for the geometry kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Setting ``MAPAWARE_PURE_PYTHON=1`` forces the
numpy backend.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

if os.environ.get("MAPAWARE_PURE_PYTHON", "") not in ("", "0"):
    _backend = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _backend

        BACKEND = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")
        _backend = _pykernels
        BACKEND = "python"

EPS = _pykernels.EPS
count_crossings = _backend.count_crossings
points_in_region = _backend.points_in_region

__all__ = ["BACKEND", "EPS", "count_crossings", "points_in_region"]
