"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in ``_numba`` with the same signature
and bit-identical results.
"""

import numpy as np
from scipy import sparse


def max_jaccard(query, indptr, indices, lo, hi):
    """Max Jaccard similarity between ``query`` and sets ``lo..hi-1`` of a CSR collection.

    ``query`` and every row of the collection must be sorted and unique.
    Returns 0.0 for an empty range.
    """
    if hi <= lo:
        return 0.0
    base = indptr[lo]
    seg = indices[base:indptr[hi]]
    sizes = np.diff(indptr[lo:hi + 1])
    if seg.size == 0 or query.size == 0:
        inter = np.zeros(hi - lo, dtype=np.int64)
    else:
        hit = np.isin(seg, query, assume_unique=False)
        csum = np.concatenate(([0], np.cumsum(hit, dtype=np.int64)))
        inter = csum[indptr[lo + 1:hi + 1] - base] - csum[indptr[lo:hi] - base]
    union = query.size + sizes - inter
    sims = np.zeros(hi - lo, dtype=np.float64)
    ok = union > 0
    sims[ok] = inter[ok] / union[ok]
    return float(sims.max())


def jaccard_row_sums(indptr, indices, block=512):
    """For each set, the sum of its Jaccard similarities with every other set."""
    n = indptr.size - 1
    out = np.zeros(n, dtype=np.float64)
    if n == 0:
        return out
    data = np.ones(indices.size, dtype=np.float64)
    ncols = int(indices.max()) + 1 if indices.size else 1
    mat = sparse.csr_matrix((data, indices, indptr), shape=(n, ncols))
    sizes = np.diff(indptr).astype(np.float64)
    mat_t = mat.T.tocsc()
    for start in range(0, n, block):
        stop = min(n, start + block)
        inter = (mat[start:stop] @ mat_t).toarray()
        union = sizes[start:stop, None] + sizes[None, :] - inter
        sims = np.zeros_like(inter)
        np.divide(inter, union, out=sims, where=union > 0)
        rows = np.arange(start, stop)
        sims[rows - start, rows] = 0.0
        # cumsum accumulates left to right, matching the scalar kernel exactly
        out[start:stop] = np.cumsum(sims, axis=1)[:, -1]
    return out


def best_split(X, y, rows, features, min_leaf):
    """Best Gini split of ``rows`` over the candidate ``features``.

    Returns ``(feature, threshold, score)`` where ``score`` is the maximised
    ``sum_children (pos^2 + neg^2) / n_child``; ``feature`` is -1 when no split
    leaves ``min_leaf`` rows on both sides.
    """
    n = rows.size
    best_f, best_t, best_s = -1, 0.0, -1.0
    if n < 2 * min_leaf:
        return best_f, best_t, best_s
    yr = y[rows].astype(np.float64)
    total_pos = yr.sum()
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    for f in features:
        xv = X[rows, f]
        order = np.argsort(xv, kind="mergesort")
        xs = xv[order]
        ys = yr[order]
        pl = np.cumsum(ys)[:-1]
        ql = nl - pl
        pr = total_pos - pl
        qr = nr - pr
        valid = (xs[1:] != xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
        if not valid.any():
            continue
        score = (pl * pl + ql * ql) / nl + (pr * pr + qr * qr) / nr
        score = np.where(valid, score, -1.0)
        pos = int(np.argmax(score))
        if score[pos] > best_s:
            lo_v, hi_v = xs[pos], xs[pos + 1]
            thr = lo_v + (hi_v - lo_v) / 2.0
            if thr >= hi_v:
                thr = lo_v
            best_f, best_t, best_s = int(f), float(thr), float(score[pos])
    return best_f, best_t, best_s


def predict_tree(X, feature, threshold, left, right, value):
    """Leaf values for each row of ``X`` under one array-encoded tree."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feature[node]
        inner = f >= 0
        if not inner.any():
            break
        idx = rows[inner]
        cur = node[inner]
        go_left = X[idx, f[inner]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
    return value[node]
