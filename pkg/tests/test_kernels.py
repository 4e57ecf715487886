import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latphish import kernels

IMPLS = kernels.backends()
pytestmark = pytest.mark.skipif("numba" not in IMPLS, reason="numba backend unavailable")

int_sets = st.lists(st.sets(st.integers(0, 40), max_size=12), min_size=0, max_size=25)


def py_jaccard(a, b):
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 0.0


@settings(max_examples=150, deadline=None)
@given(int_sets, st.sets(st.integers(0, 40), max_size=12), st.data())
def test_max_jaccard_backends_and_oracle(sets, query, data):
    indptr, indices = kernels.csr_from_sets(sets)
    q = np.array(sorted(query), dtype=np.int64)
    lo = data.draw(st.integers(0, len(sets)))
    hi = data.draw(st.integers(lo, len(sets)))
    expected = max((py_jaccard(query, s) for s in sets[lo:hi]), default=0.0)
    a = IMPLS["numpy"].max_jaccard(q, indptr, indices, lo, hi)
    b = IMPLS["numba"].max_jaccard(q, indptr, indices, lo, hi)
    assert a == b == expected


@settings(max_examples=100, deadline=None)
@given(int_sets)
def test_jaccard_row_sums_backends_and_oracle(sets):
    indptr, indices = kernels.csr_from_sets(sets)
    a = IMPLS["numpy"].jaccard_row_sums(indptr, indices)
    b = IMPLS["numba"].jaccard_row_sums(indptr, indices)
    np.testing.assert_array_equal(a, b)
    expected = [sum(py_jaccard(s, t) for j, t in enumerate(sets) if j != i) for i, s in enumerate(sets)]
    np.testing.assert_allclose(a, expected, rtol=1e-12, atol=0)


def py_best_split(X, y, rows, features, min_leaf):
    """Exhaustive scan of midpoints between distinct sorted values."""
    best = (-1, 0.0, -1.0)
    for f in features:
        vals = sorted(set(X[rows, f]))
        for lo_v, hi_v in zip(vals, vals[1:]):
            thr = lo_v + (hi_v - lo_v) / 2.0
            if thr >= hi_v:
                thr = lo_v
            left = [r for r in rows if X[r, f] <= thr]
            right = [r for r in rows if X[r, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            score = 0.0
            for part in (left, right):
                p = sum(y[r] for r in part)
                q = len(part) - p
                score += (p * p + q * q) / len(part)
            if score > best[2]:
                best = (int(f), float(thr), score)
    return best


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 40), st.integers(1, 3), st.integers(1, 5), st.integers(0, 2**31))
def test_best_split_backends_and_oracle(n, d, min_leaf, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, size=(n, d)).astype(np.float64)
    y = rng.integers(0, 2, size=n).astype(np.float64)
    rows = rng.integers(0, n, size=n).astype(np.int64)
    feats = np.arange(d, dtype=np.int64)
    a = IMPLS["numpy"].best_split(X, y, rows, feats, min_leaf)
    b = IMPLS["numba"].best_split(X, y, rows, feats, min_leaf)
    assert (int(a[0]), float(a[1]), float(a[2])) == (int(b[0]), float(b[1]), float(b[2]))
    f, thr, score = py_best_split(X, y, rows, feats, min_leaf)
    assert int(a[0]) == f
    if f >= 0:
        assert float(a[1]) == thr and float(a[2]) == pytest.approx(score, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31))
def test_predict_tree_backends(seed):
    rng = np.random.default_rng(seed)
    # random full tree of depth 3 over 2 features
    feature = np.array([0, 1, 1, -1, -1, -1, -1], dtype=np.int64)
    threshold = rng.random(7)
    left = np.array([1, 3, 5, -1, -1, -1, -1], dtype=np.int64)
    right = np.array([2, 4, 6, -1, -1, -1, -1], dtype=np.int64)
    value = rng.random(7)
    X = rng.random((30, 2))
    a = IMPLS["numpy"].predict_tree(X, feature, threshold, left, right, value)
    b = IMPLS["numba"].predict_tree(X, feature, threshold, left, right, value)
    np.testing.assert_array_equal(a, b)
    for r in range(30):
        node = 0
        while feature[node] >= 0:
            node = left[node] if X[r, feature[node]] <= threshold[node] else right[node]
        assert a[r] == value[node]


def test_csr_from_sets_sorted_unique():
    indptr, indices = kernels.csr_from_sets([[3, 1, 3], [], [2]])
    assert indptr.tolist() == [0, 2, 2, 3] and indices.tolist() == [1, 3, 2]


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_env_flag_selects_backend(backend):
    out = subprocess.run([sys.executable, "-c", "from latphish import kernels; print(kernels.BACKEND)"],
                         env={**os.environ, "LATPHISH_KERNELS": backend}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == backend


def test_env_flag_rejects_unknown_backend():
    out = subprocess.run([sys.executable, "-c", "import latphish.kernels"],
                         env={**os.environ, "LATPHISH_KERNELS": "cuda"}, capture_output=True, text=True)
    assert out.returncode != 0 and "LATPHISH_KERNELS" in out.stderr
