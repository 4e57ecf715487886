"""Bagged Gini decision-tree ensemble, written from scratch.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``); ``feature == -1`` marks a leaf whose ``value`` is the
fraction of phish rows that reached it. The split search and batch
prediction run through :mod:`latphish.kernels`.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import kernels
from .features import FEATURE_NAMES, FeatureVector

MODEL_FORMAT = "latphish-forest"
MODEL_VERSION = 1
PHISH, BENIGN = "phish", "benign"

DEFAULT_GRID = {
    "n_trees": list(range(50, 501, 50)),
    "max_depth": list(range(10, 101, 10)),
    "min_leaf": [1, 2, 4, 8],
    "downsample_ratio": [10, 50, 100, 200],
}


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: str
    email_id: str

    def __post_init__(self):
        if self.label not in (PHISH, BENIGN):
            raise ValueError(f"label must be phish or benign, got {self.label!r}")


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 64
    max_depth: int = 8
    min_leaf: int = 4
    downsample_ratio: int = 200
    rng_seed: int = 0
    features_per_split: int | None = None

    def __post_init__(self):
        for name in ("n_trees", "max_depth", "min_leaf", "downsample_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be positive")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")

    def split_features(self, n_features: int) -> int:
        k = self.features_per_split or math.ceil(math.sqrt(n_features))
        return min(k, n_features)

    def replace(self, **kw) -> TrainConfig:
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_rows: np.ndarray

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return best

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return kernels.predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature,
                                    self.threshold, self.left, self.right, self.value)

    def to_record(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_rows": self.n_rows.tolist(),
        }

    @classmethod
    def from_record(cls, rec) -> Tree:
        return cls(
            np.array(rec["feature"], dtype=np.int64),
            np.array(rec["threshold"], dtype=np.float64),
            np.array(rec["left"], dtype=np.int64),
            np.array(rec["right"], dtype=np.int64),
            np.array(rec["value"], dtype=np.float64),
            np.array(rec["n_rows"], dtype=np.int64),
        )


@dataclass
class Forest:
    trees: list[Tree]
    importances: np.ndarray
    config: TrainConfig
    n_features: int = len(FEATURE_NAMES)
    feature_names: tuple[str, ...] = field(default=FEATURE_NAMES)

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        total = np.zeros(X.shape[0], dtype=np.float64)
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)

    def importance_map(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.importances.tolist()))


def _as_xy(data):
    if not data:
        raise TrainingError("no training examples")
    X = np.vstack([ex.features.as_array() if isinstance(ex.features, FeatureVector)
                   else np.asarray(ex.features, dtype=np.float64) for ex in data])
    y = np.array([1.0 if ex.label == PHISH else 0.0 for ex in data])
    return X, y


def _gap_midpoint(column_values, node_values, thr):
    """Threshold inside the rank-middle gap of the training column between the split's neighbours.

    ``lo`` and ``hi`` are the node values on either side of the chosen split.
    The training column may hold further (out-of-bag) values between them;
    the threshold is the numeric midpoint of the middle gap by rank. The node
    partition is unchanged, and which side any training row falls on depends
    only on per-feature order.
    """
    lo = node_values[node_values <= thr].max()
    hi = node_values[node_values > thr].min()
    between = column_values[np.searchsorted(column_values, lo):np.searchsorted(column_values, hi) + 1]
    j = (between.size - 2) // 2
    a, b = between[j], between[j + 1]
    mid = a + (b - a) / 2.0
    return float(mid if mid < b else a)


def _grow_tree(X, y, config: TrainConfig, tree_index: int):
    n, d = X.shape
    rng = np.random.default_rng(config.rng_seed + tree_index)
    k = config.split_features(d)
    rows_all = rng.integers(0, n, size=n)
    columns = [np.unique(X[:, j]) for j in range(d)]
    feature, threshold, left, right, value, n_rows = [], [], [], [], [], []
    gains = np.zeros(d, dtype=np.float64)

    def build(rows, depth):
        node = len(feature)
        m = rows.size
        pos = float(y[rows].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(pos / m)
        n_rows.append(m)
        if depth >= config.max_depth or pos == 0.0 or pos == m or m < 2 * config.min_leaf:
            return node
        feats = np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
        f, thr, score = kernels.best_split(X, y, rows, feats, config.min_leaf)
        if f < 0 and k < d:
            # no valid split among the sampled features: look at the rest before giving up
            rest = np.setdiff1d(np.arange(d, dtype=np.int64), feats)
            f, thr, score = kernels.best_split(X, y, rows, rest, config.min_leaf)
        if f < 0:
            return node
        thr = _gap_midpoint(columns[f], X[rows, f], thr)
        neg = m - pos
        gains[f] += max(0.0, score - (pos * pos + neg * neg) / m)
        go_left = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(rows[go_left], depth + 1)
        right[node] = build(rows[~go_left], depth + 1)
        return node

    build(rows_all.astype(np.int64), 0)
    tree = Tree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64), np.array(n_rows, dtype=np.int64),
    )
    return tree, gains


def fit(X, y, config: TrainConfig = TrainConfig(), n_jobs: int = 1) -> Forest:
    """Train on a feature matrix and 0/1 labels (1 = phish)."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.ascontiguousarray(np.asarray(y, dtype=np.float64))
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise TrainingError("X must be a non-empty 2-D matrix matching y")
    if not np.all(np.isfinite(X)):
        raise TrainingError("features must be finite")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise TrainingError("training data must contain both classes")
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            grown = list(pool.map(lambda i: _grow_tree(X, y, config, i), range(config.n_trees)))
    else:
        grown = [_grow_tree(X, y, config, i) for i in range(config.n_trees)]
    gains = np.zeros(X.shape[1], dtype=np.float64)
    for _, g in grown:
        gains += g
    total = gains.sum()
    importances = gains / total if total > 0 else np.full(X.shape[1], 1.0 / X.shape[1])
    names = FEATURE_NAMES if X.shape[1] == len(FEATURE_NAMES) else tuple(f"f{i}" for i in range(X.shape[1]))
    return Forest([t for t, _ in grown], importances, config, X.shape[1], names)


def train(data, config: TrainConfig = TrainConfig(), n_jobs: int = 1) -> Forest:
    """Train on :class:`LabeledExample` rows."""
    X, y = _as_xy(list(data))
    return fit(X, y, config, n_jobs)


def predict(forest: Forest, fv) -> tuple[str, float]:
    """(label, score); score is the mean leaf phish fraction, phish iff score >= 0.5."""
    x = fv.as_array() if isinstance(fv, FeatureVector) else np.asarray(fv, dtype=np.float64)
    score = float(forest.predict_proba(x[None, :])[0])
    return (PHISH if score >= 0.5 else BENIGN), score


def downsample(phish, benign_pool, ratio: int, seed: int):
    """All phish plus ``min(ratio * |phish|, |pool|)`` benign drawn without replacement."""
    phish, benign_pool = list(phish), list(benign_pool)
    if not phish:
        raise TrainingError("cannot train without phish examples")
    if not benign_pool:
        raise TrainingError("benign pool is empty")
    k = min(ratio * len(phish), len(benign_pool))
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(len(benign_pool), size=k, replace=False))
    return phish + [benign_pool[i] for i in picks]


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    y_true = np.asarray(y_true, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row, classes dealt round-robin after a seeded shuffle."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=np.int64)
    for cls in (1, 0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = np.arange(idx.size) % k
    return fold


def _grid_points(grid):
    keys = ("n_trees", "max_depth", "min_leaf", "downsample_ratio")
    values = [sorted(set(grid.get(key, [getattr(TrainConfig(), key)]))) for key in keys]
    for combo in itertools.product(*values):
        yield dict(zip(keys, combo))


def grid_search_cv(data, grid=None, k: int = 3, seed: int = 0, n_jobs: int = 1,
                   return_scores: bool = False):
    """Pick the TrainConfig with the best mean per-fold ROC-AUC.

    Each fold's training part is downsampled with the candidate ratio; the
    held-out fold is scored in full. Ties go to fewer trees, then smaller
    depth, then larger min_leaf, then smaller ratio.
    """
    grid = DEFAULT_GRID if grid is None else grid
    data = list(data)
    X, y = _as_xy(data)
    if int(y.sum()) < k:
        raise TrainingError(f"need at least {k} phish examples for {k}-fold search")
    if int((y == 0).sum()) < k:
        raise TrainingError(f"need at least {k} benign examples for {k}-fold search")
    folds = stratified_folds(y, k, seed)
    scored = []
    for point in _grid_points(grid):
        cfg = TrainConfig(rng_seed=seed, **point)
        aucs = []
        for f in range(k):
            tr = np.flatnonzero(folds != f)
            te = np.flatnonzero(folds == f)
            pos = [i for i in tr if y[i] == 1]
            neg = [i for i in tr if y[i] == 0]
            rows = np.array(downsample(pos, neg, cfg.downsample_ratio, seed + f), dtype=np.int64)
            model = fit(X[rows], y[rows], cfg, n_jobs)
            aucs.append(roc_auc(y[te], model.predict_proba(X[te])))
        scored.append((float(np.mean(aucs)), cfg))
    best = min(scored, key=lambda s: (-s[0], s[1].n_trees, s[1].max_depth, -s[1].min_leaf, s[1].downsample_ratio))
    return (best[1], scored) if return_scores else best[1]


def save_model(forest: Forest, path):
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": asdict(forest.config),
        "n_features": forest.n_features,
        "feature_names": list(forest.feature_names),
        "importances": forest.importances.tolist(),
        "n_trees": len(forest.trees),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for t in forest.trees:
            fh.write(json.dumps(t.to_record(), separators=(",", ":")) + "\n")


def load_model(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty model file")
    header = json.loads(lines[0])
    if header.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    if header.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {header.get('version')}")
    trees = [Tree.from_record(json.loads(ln)) for ln in lines[1:]]
    if len(trees) != header["n_trees"]:
        raise ValueError(f"{path}: expected {header['n_trees']} trees, found {len(trees)}")
    return Forest(trees, np.array(header["importances"], dtype=np.float64), TrainConfig(**header["config"]),
                  int(header["n_features"]), tuple(header["feature_names"]))
