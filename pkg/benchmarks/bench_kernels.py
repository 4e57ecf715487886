#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Each kernel runs on the same random inputs under both backends; outputs are
checked for exact equality before any timing is reported.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--seed 0]
"""

import argparse
import time

import numpy as np

from latphish import kernels
from latphish.forest import TrainConfig, fit


def random_sets(rng, n, vocab, mean_size):
    sizes = rng.poisson(mean_size, n) + 1
    return [rng.choice(vocab, size=min(s, vocab), replace=False) for s in sizes]


def make_cases(rng):
    """(name, callable args) for each kernel at a realistic size."""
    ref = kernels.csr_from_sets(random_sets(rng, 20_000, 5_000, 40))
    query = np.unique(rng.choice(5_000, 40, replace=False)).astype(np.int64)
    med = kernels.csr_from_sets(random_sets(rng, 600, 800, 60))

    X = np.column_stack([
        rng.integers(1, 50, 20_000),
        rng.random(20_000),
        rng.integers(0, 2, 20_000),
        rng.integers(1, 10_000_000, 20_000),
        rng.integers(0, 31, 20_000),
    ]).astype(np.float64)
    y = (X[:, 1] + 0.3 * rng.standard_normal(20_000) > 0.8).astype(np.int8)
    rows = np.arange(X.shape[0], dtype=np.int64)
    feats = np.arange(X.shape[1], dtype=np.int64)
    tree = fit(X, y, TrainConfig(n_trees=1, max_depth=12, min_leaf=2)).trees[0]
    tree_args = (X, tree.feature, tree.threshold, tree.left, tree.right, tree.value)

    return [
        ("max_jaccard", (query, *ref, 0, 20_000)),
        ("jaccard_row_sums", med),
        ("best_split", (X, y, rows, feats, 4)),
        ("predict_tree", tree_args),
    ]


def time_call(fn, args, repeat):
    fn(*args)  # warm-up, includes JIT compilation on the numba path
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, z) for x, z in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    impls = kernels.backends()
    if "numba" not in impls:
        raise SystemExit("numba backend unavailable; nothing to compare")
    cases = make_cases(np.random.default_rng(args.seed))

    print(f"{'kernel':18s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  equal")
    for name, case_args in cases:
        outs, secs = {}, {}
        for backend in ("numpy", "numba"):
            fn = getattr(impls[backend], name)
            outs[backend] = fn(*case_args)
            secs[backend] = time_call(fn, case_args, args.repeat)
        equal = same(outs["numpy"], outs["numba"])
        print(f"{name:18s} {1e3 * secs['numpy']:10.3f} {1e3 * secs['numba']:10.3f} "
              f"{secs['numpy'] / secs['numba']:7.1f}x  {equal}")
        if not equal:
            raise SystemExit(f"{name}: backends disagree")


if __name__ == "__main__":
    main()
