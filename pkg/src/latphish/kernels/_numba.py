"""numba-compiled kernels; same contracts as ``_numpy``."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _intersect_sorted(a, a_lo, a_hi, b, b_lo, b_hi):
    i, j, k = a_lo, b_lo, 0
    while i < a_hi and j < b_hi:
        if a[i] == b[j]:
            k += 1
            i += 1
            j += 1
        elif a[i] < b[j]:
            i += 1
        else:
            j += 1
    return k


@njit(cache=True, nogil=True)
def max_jaccard(query, indptr, indices, lo, hi):
    best = 0.0
    nq = query.size
    for s in range(lo, hi):
        a, b = indptr[s], indptr[s + 1]
        inter = _intersect_sorted(query, 0, nq, indices, a, b)
        union = nq + (b - a) - inter
        if union > 0:
            sim = inter / union
            if sim > best:
                best = sim
    return best


@njit(cache=True, nogil=True)
def jaccard_row_sums(indptr, indices):
    n = indptr.size - 1
    out = np.zeros(n, dtype=np.float64)
    if n == 0 or indices.size == 0:
        return out
    # inverted index: element -> rows holding it, rows ascending
    m = indices.max() + 1
    head = np.zeros(m + 1, dtype=np.int64)
    for k in range(indices.size):
        head[indices[k] + 1] += 1
    for v in range(m):
        head[v + 1] += head[v]
    fill = head[:-1].copy()
    post = np.empty(indices.size, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            v = indices[k]
            post[fill[v]] = i
            fill[v] += 1
    inter = np.zeros(n, dtype=np.int64)
    for i in range(n):
        a = indptr[i + 1] - indptr[i]
        for k in range(indptr[i], indptr[i + 1]):
            v = indices[k]
            for p in range(head[v], head[v + 1]):
                inter[post[p]] += 1
        acc = 0.0
        for j in range(n):
            if j != i:
                union = a + (indptr[j + 1] - indptr[j]) - inter[j]
                if union > 0:
                    acc += inter[j] / union
            inter[j] = 0
        out[i] = acc
    return out


@njit(cache=True, nogil=True)
def best_split(X, y, rows, features, min_leaf):
    n = rows.size
    best_f, best_t, best_s = -1, 0.0, -1.0
    if n < 2 * min_leaf:
        return best_f, best_t, best_s
    total_pos = 0.0
    for r in range(n):
        total_pos += y[rows[r]]
    xv = np.empty(n, dtype=np.float64)
    for fi in range(features.size):
        f = features[fi]
        for r in range(n):
            xv[r] = X[rows[r], f]
        order = np.argsort(xv, kind="mergesort")
        pl = 0.0
        for k in range(n - 1):
            pl += y[rows[order[k]]]
            x_here = xv[order[k]]
            x_next = xv[order[k + 1]]
            if x_here == x_next:
                continue
            nl = k + 1.0
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            ql = nl - pl
            pr = total_pos - pl
            qr = nr - pr
            score = (pl * pl + ql * ql) / nl + (pr * pr + qr * qr) / nr
            if score > best_s:
                thr = x_here + (x_next - x_here) / 2.0
                if thr >= x_next:
                    thr = x_here
                best_f, best_t, best_s = f, thr, score
    return best_f, best_t, best_s


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], dtype=np.float64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]
    return out
