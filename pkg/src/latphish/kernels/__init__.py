"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``LATPHISH_KERNELS=numpy`` to
force the fallback; the default is ``numba`` when it imports cleanly. Both
backends return bit-identical results, so the choice only affects speed.
"""

import logging
import os

import numpy as np

from . import _numpy

log = logging.getLogger(__name__)

_requested = os.environ.get("LATPHISH_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"LATPHISH_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

_compiled = None
if _requested == "numba":
    try:
        from . import _numba as _compiled
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, falling back to numpy kernels")

BACKEND = "numba" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _numpy


def backends():
    """Available kernel modules keyed by name (used by tests and benchmarks)."""
    out = {"numpy": _numpy}
    if _compiled is not None:
        out["numba"] = _compiled
    else:
        try:
            from . import _numba as nb_mod
            out["numba"] = nb_mod
        except ImportError:  # pragma: no cover
            pass
    return out


def max_jaccard(query, indptr, indices, lo, hi):
    return float(_impl.max_jaccard(query, indptr, indices, int(lo), int(hi)))


def jaccard_row_sums(indptr, indices):
    return _impl.jaccard_row_sums(indptr, indices)


def best_split(X, y, rows, features, min_leaf):
    f, t, s = _impl.best_split(X, y, rows, features, int(min_leaf))
    return int(f), float(t), float(s)


def predict_tree(X, feature, threshold, left, right, value):
    return _impl.predict_tree(X, feature, threshold, left, right, value)


def csr_from_sets(sets, dtype=np.int64):
    """Pack an iterable of integer collections into sorted-unique CSR arrays."""
    rows = [np.unique(np.asarray(list(s), dtype=dtype)) for s in sets]
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    if rows:
        indptr[1:] = np.cumsum([r.size for r in rows])
        indices = np.concatenate(rows) if indptr[-1] else np.zeros(0, dtype=dtype)
    else:
        indices = np.zeros(0, dtype=dtype)
    return indptr, indices.astype(dtype, copy=False)
