"""Segment pooling kernels, compiled when available.

The compiled extension is used unless it failed to build or the
``HCA_PURE_PYTHON`` environment variable is set to a non-empty value.
"""

import os

import numpy as np

from . import _kernels_py as py

compiled = None
if not os.environ.get("HCA_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

BACKEND = "cython" if compiled is not None else "numpy"
_impl = compiled if compiled is not None else py


def group_starts(group_of):
    g = np.asarray(group_of)
    return np.flatnonzero(np.r_[True, g[1:] != g[:-1]]).astype(np.int64)


def _prep(P):
    return np.ascontiguousarray(np.atleast_2d(P), dtype=np.float64)


def segment_sum(P, starts):
    return _impl.segment_sum(_prep(P), np.ascontiguousarray(starts, dtype=np.int64))


def segment_max(P, starts):
    """Per-group maxima and the (first) column index attaining each."""
    return _impl.segment_max(_prep(P), np.ascontiguousarray(starts, dtype=np.int64))


def range_consistent(P, starts, use_max):
    return np.asarray(_impl.range_consistent(
        _prep(P), np.ascontiguousarray(starts, dtype=np.int64), int(bool(use_max))), dtype=bool)


def segment_softmax_ce(Z, offsets, target, weight, log_eps):
    """Summed mean cross-entropy of independent softmax segments, and ``dL/dZ``."""
    return _impl.segment_softmax_ce(
        _prep(Z), np.ascontiguousarray(offsets, dtype=np.int64), _prep(target),
        np.ascontiguousarray(weight, dtype=np.float64), float(log_eps))
