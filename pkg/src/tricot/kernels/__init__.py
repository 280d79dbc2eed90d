"""Backend selection for the temporal pooling/upsampling kernels.

The env var TRICOT_KERNELS picks the implementation: "numba" (default when
numba imports) or "numpy".  Both backends share contracts and agree to
rounding order; see benchmarks/bench_kernels.py for the speed comparison.
"""

from __future__ import annotations

import logging
import os

from . import _numpy

_log = logging.getLogger(__name__)

try:
    from . import _numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    _numba = None
    HAS_NUMBA = False

_choice = os.environ.get("TRICOT_KERNELS", "numba" if HAS_NUMBA else "numpy").lower()
if _choice == "numba" and not HAS_NUMBA:
    _log.warning("TRICOT_KERNELS=numba requested but numba is unavailable; using numpy")
    _choice = "numpy"
if _choice not in ("numba", "numpy"):
    raise ValueError(f"TRICOT_KERNELS must be 'numba' or 'numpy', got {_choice!r}")

_impl = _numba if _choice == "numba" else _numpy


def backend() -> str:
    """Name of the active kernel backend."""
    return _choice


pool_len = _numpy.pool_len
masked_mean_pool_fwd = _impl.masked_mean_pool_fwd
masked_mean_pool_bwd = _impl.masked_mean_pool_bwd
linear_upsample_fwd = _impl.linear_upsample_fwd
linear_upsample_bwd = _impl.linear_upsample_bwd
