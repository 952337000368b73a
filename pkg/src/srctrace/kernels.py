"""Kernel dispatch: compiled Cython loops when built, numpy otherwise.

Set ``SRCTRACE_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

IMPLEMENTATION = "python"
_impl = _pykernels

if not os.environ.get("SRCTRACE_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        IMPLEMENTATION = "compiled"
    except ImportError:
        _impl = _pykernels


def operating_points(scores_desc, is_target_desc):
    """FAR/FRR at each distinct score of a descending-sorted score array."""
    s = np.ascontiguousarray(scores_desc, dtype=np.float64)
    t = np.ascontiguousarray(is_target_desc, dtype=np.uint8)
    return _impl.operating_points(s, t)


def paired_cosine(a, ia, b, ib):
    """Row-paired cosine similarity ``cos(a[ia[k]], b[ib[k]])``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    ia = np.ascontiguousarray(ia, dtype=np.int64)
    ib = np.ascontiguousarray(ib, dtype=np.int64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("paired_cosine: matrices must be 2-D with equal width")
    if ia.shape != ib.shape:
        raise ValueError("paired_cosine: index arrays differ in length")
    return _impl.paired_cosine(a, ia, b, ib)
