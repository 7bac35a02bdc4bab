"""Gini decision trees and random forests, written from scratch.

Tree induction runs in a numba kernel (``nogil``) so trees can be grown from
a thread pool.  Every tree gets its own seed drawn up front from the forest
seed; bootstrap rows are drawn with numpy and feature sub-sampling uses a
splitmix64 stream inside the kernel, so a forest is a pure function of
``(X, y, hyperparameters, seed)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numba
import numpy as np

from .errors import DegenerateLabels, DimensionMismatch, InsufficientData, ParseError
from .parallel import ordered_map

MODEL_FORMAT = "cryptoscope-forest"
MODEL_VERSION = 1


# --- numba kernels -----------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@numba.njit(cache=True, nogil=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True)
def _randbelow(state, n):
    return np.int64(_next_u64(state) % np.uint64(n))


@numba.njit(cache=True, nogil=True)
def _grow(X, y, rows, max_depth, max_features, seed):
    n_rows = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap, np.float64)
    n_node = np.zeros(cap, np.int64)
    importance = np.zeros(p, np.float64)

    state = np.empty(1, np.uint64)
    state[0] = seed
    work = rows.copy()
    feats = np.arange(p)
    vals = np.empty(n_rows, np.float64)
    labs = np.empty(n_rows, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n_rows
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        n = end - start
        pos = 0
        for i in range(start, end):
            pos += y[work[i]]
        frac = pos / n
        value[node] = frac
        n_node[node] = n
        gini = 2.0 * frac * (1.0 - frac)
        if n < 2 or pos == 0 or pos == n or (max_depth >= 0 and depth >= max_depth):
            continue

        best_gain = -1.0
        best_f = -1
        best_t = 0.0
        visited = 0
        for k in range(p):
            if visited >= max_features:
                break
            j = k + _randbelow(state, p - k)
            tmp = feats[k]
            feats[k] = feats[j]
            feats[j] = tmp
            f = feats[k]
            for i in range(n):
                vals[i] = X[work[start + i], f]
            order = np.argsort(vals[:n], kind="mergesort")
            if vals[order[0]] == vals[order[n - 1]]:
                continue
            visited += 1
            for i in range(n):
                labs[i] = y[work[start + order[i]]]
            left_pos = 0
            for i in range(n - 1):
                left_pos += labs[i]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a == b:
                    continue
                nl = i + 1
                nr = n - nl
                fl = left_pos / nl
                fr = (pos - left_pos) / nr
                child = (nl * 2.0 * fl * (1.0 - fl) + nr * 2.0 * fr * (1.0 - fr)) / n
                gain = gini - child
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    mid = a + (b - a) / 2.0
                    best_t = mid if mid < b else a
        if best_f < 0:
            continue

        # partition rows: x <= threshold goes left
        i = start
        j = end - 1
        while i <= j:
            if X[work[i], best_f] <= best_t:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        mid_idx = i
        nl = mid_idx - start
        nr = end - mid_idx
        pl = 0
        for r in range(start, mid_idx):
            pl += y[work[r]]
        fl = pl / nl
        fr = (pos - pl) / nr
        importance[best_f] += n * gini - nl * 2.0 * fl * (1.0 - fl) - nr * 2.0 * fr * (1.0 - fr)

        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[top] = n_nodes
        st_start[top] = start
        st_end[top] = mid_idx
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = n_nodes + 1
        st_start[top] = mid_idx
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), n_node[:n_nodes].copy(), importance)


@numba.njit(cache=True, nogil=True)
def _predict_packed(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.zeros(n, np.float64)
    for r in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[r, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[r] = acc / n_trees
    return out


@numba.njit(cache=True, nogil=True)
def _leaf_value(row, feature, threshold, left, right, value, root):
    node = root
    while feature[node] >= 0:
        if row[feature[node]] <= threshold[node]:
            node = left[node]
        else:
            node = right[node]
    return value[node]


@numba.njit(cache=True, nogil=True)
def _oob_drop(X, y, oob, feature, threshold, left, right, value, root, seed):
    """Per-feature drop in out-of-bag accuracy of one tree when that feature's
    column is permuted among the out-of-bag rows."""
    p = X.shape[1]
    m = oob.shape[0]
    drop = np.zeros(p, np.float64)
    if m == 0:
        return drop
    used = np.zeros(p, np.bool_)
    for k in range(feature.shape[0]):
        if feature[k] >= 0:
            used[feature[k]] = True
    base = 0
    for k in range(m):
        pred = 1 if _leaf_value(X[oob[k]], feature, threshold, left, right, value, root) >= 0.5 else 0
        base += pred == y[oob[k]]
    state = np.array([seed], np.uint64)
    perm = np.empty(m, np.int64)
    row = np.empty(p, np.float64)
    for j in range(p):
        if not used[j]:
            continue
        for k in range(m):
            perm[k] = oob[k]
        for k in range(m - 1, 0, -1):
            r = _randbelow(state, k + 1)
            perm[k], perm[r] = perm[r], perm[k]
        hit = 0
        for k in range(m):
            row[:] = X[oob[k]]
            row[j] = X[perm[k], j]
            pred = 1 if _leaf_value(row, feature, threshold, left, right, value, root) >= 0.5 else 0
            hit += pred == y[oob[k]]
        drop[j] = (base - hit) / m
    return drop


# --- trees and forests -------------------------------------------------------

@dataclass
class DecisionTree:
    """Flattened binary tree; leaves have ``feature == -1``.

    Child indices are local to the tree.  ``value`` holds the fraction of
    class-1 (malicious) training rows reaching each node.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: Optional[np.ndarray] = None
    importance: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def _rows(self, tree_seed: int, n: int) -> np.ndarray:
        if self.params.bootstrap:
            return np.random.default_rng(tree_seed).integers(0, n, n).astype(np.int64)
        return np.arange(n, dtype=np.int64)

    def oob_importance(self, X, y, seed: int = 0, scaled: bool = True,
                       workers: int = 1) -> np.ndarray:
        """Mean decrease in out-of-bag accuracy under column permutation.

        ``X, y`` must be the training data the forest was fitted on.  With
        ``scaled`` the per-tree mean is divided by its standard error, giving a
        z-score (0 where every tree agrees exactly).
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if not self.tree_seeds or X.shape != (self.n_train, self.n_features) or len(y) != len(X):
            raise DimensionMismatch("out-of-bag importance needs the forest's own training data")
        n = len(X)
        perm_seeds = np.random.SeedSequence([seed, 0x00B]).generate_state(self.n_trees, dtype=np.uint64)

        def one(t):
            inbag = np.zeros(n, bool)
            inbag[self._rows(self.tree_seeds[t], n)] = True
            oob = np.flatnonzero(~inbag).astype(np.int64)
            tr = self.trees[t]
            return _oob_drop(X, y, oob, tr.feature, tr.threshold, tr.left, tr.right, tr.value,
                             np.int64(0), perm_seeds[t])

        drops = np.vstack(ordered_map(one, range(self.n_trees), workers=workers))
        mean = drops.mean(axis=0)
        if not scaled:
            return mean
        se = drops.std(axis=0, ddof=1) / math.sqrt(len(drops)) if len(drops) > 1 else np.zeros_like(mean)
        return np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_packed(X, self.feature, self.threshold, self.left, self.right, self.value,
                               np.zeros(1, np.int64))

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], np.float64),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], np.float64))


def grow_tree(X, y, rows=None, max_depth: Optional[int] = None,
              max_features: Optional[int] = None, seed: int = 0) -> DecisionTree:
    """Grow one Gini tree on ``rows`` of ``(X, y)`` (all rows by default)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rows = np.arange(len(y), dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    p = X.shape[1]
    mf = p if max_features is None else int(max(1, min(max_features, p)))
    out = _grow(X, y, rows, -1 if max_depth is None else int(max_depth), mf, np.uint64(seed))
    return DecisionTree(*out)


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    features_per_split: Optional[int] = None   # None -> ceil(sqrt(p))
    bootstrap: bool = True

    def resolved_features(self, p: int) -> int:
        if self.features_per_split is None:
            return max(1, math.ceil(math.sqrt(p)))
        return max(1, min(int(self.features_per_split), p))


def _check_labels(y: np.ndarray, min_per_class: int = 2) -> None:
    counts = np.bincount(y, minlength=2)
    if len(counts) > 2 or counts.min() < 1:
        raise DegenerateLabels("training labels must contain both classes 0 and 1")
    if counts.min() < min_per_class:
        raise DegenerateLabels(f"need at least {min_per_class} samples per class, got {counts.tolist()}")


class RandomForest:
    """Bagged Gini trees; ``predict_proba`` is the mean of per-tree leaf frequencies."""

    def __init__(self, n_trees: int = 100, max_depth: Optional[int] = None,
                 features_per_split: Optional[int] = None, bootstrap: bool = True,
                 seed: int = 0, feature_names: Optional[Sequence[str]] = None):
        if int(n_trees) < 1:
            raise ValueError("a forest needs at least one tree")
        self.params = Hyperparams(int(n_trees), max_depth, features_per_split, bootstrap)
        self.seed = int(seed)
        self.feature_names = list(feature_names) if feature_names is not None else None
        self.trees: list[DecisionTree] = []
        self.n_features: Optional[int] = None
        self.tree_seeds: list[int] = []
        self.n_train: Optional[int] = None
        self._packed = None

    @classmethod
    def from_params(cls, params: Hyperparams, seed: int = 0, feature_names=None) -> "RandomForest":
        return cls(params.n_trees, params.max_depth, params.features_per_split, params.bootstrap,
                   seed, feature_names)

    @property
    def n_trees(self) -> int:
        return self.params.n_trees

    def fit(self, X, y, workers: int = 1) -> "RandomForest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] != len(y):
            raise DimensionMismatch(f"X has shape {X.shape} but y has {len(y)} labels")
        _check_labels(y)
        n, p = X.shape
        mf = self.params.resolved_features(p)
        depth = -1 if self.params.max_depth is None else int(self.params.max_depth)
        seeds = np.random.SeedSequence(self.seed).generate_state(self.n_trees, dtype=np.uint64)

        def one(tree_seed):
            rows = self._rows(int(tree_seed), n)
            return DecisionTree(*_grow(X, y, rows, depth, mf, np.uint64(tree_seed)))

        self.trees = ordered_map(one, list(seeds), workers=workers)
        self.tree_seeds = [int(s) for s in seeds]
        self.n_train = n
        self.n_features = p
        self._packed = None
        return self

    def _pack(self):
        if self._packed is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
            shift = lambda arr, off: np.where(arr >= 0, arr + off, -1)
            self._packed = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([t.value for t in self.trees]),
                offsets[:-1].astype(np.int64),
            )
        return self._packed

    def predict_proba(self, X) -> np.ndarray:
        if not self.trees:
            raise RuntimeError("forest is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        out = _predict_packed(np.ascontiguousarray(X), *self._pack())
        return out[0] if single else out

    __call__ = predict_proba

    def predict(self, X) -> np.ndarray:
        return (np.atleast_1d(self.predict_proba(X)) >= 0.5).astype(np.int64)

    @property
    def feature_importances_(self) -> np.ndarray:
        """Mean decrease in Gini impurity, normalised to sum to 1 (zeros if no splits)."""
        total = np.zeros(self.n_features)
        for t in self.trees:
            if t.importance is not None and t.importance.sum() > 0:
                total += t.importance / t.importance.sum()
        s = total.sum()
        return total / s if s > 0 else total

    def _rows(self, tree_seed: int, n: int) -> np.ndarray:
        if self.params.bootstrap:
            return np.random.default_rng(tree_seed).integers(0, n, n).astype(np.int64)
        return np.arange(n, dtype=np.int64)

    def oob_importance(self, X, y, seed: int = 0, scaled: bool = True,
                       workers: int = 1) -> np.ndarray:
        """Mean decrease in out-of-bag accuracy under column permutation.

        ``X, y`` must be the training data the forest was fitted on.  With
        ``scaled`` the per-tree mean is divided by its standard error, giving a
        z-score (0 where every tree agrees exactly).
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if not self.tree_seeds or X.shape != (self.n_train, self.n_features) or len(y) != len(X):
            raise DimensionMismatch("out-of-bag importance needs the forest's own training data")
        n = len(X)
        perm_seeds = np.random.SeedSequence([seed, 0x00B]).generate_state(self.n_trees, dtype=np.uint64)

        def one(t):
            inbag = np.zeros(n, bool)
            inbag[self._rows(self.tree_seeds[t], n)] = True
            oob = np.flatnonzero(~inbag).astype(np.int64)
            tr = self.trees[t]
            return _oob_drop(X, y, oob, tr.feature, tr.threshold, tr.left, tr.right, tr.value,
                             np.int64(0), perm_seeds[t])

        drops = np.vstack(ordered_map(one, range(self.n_trees), workers=workers))
        mean = drops.mean(axis=0)
        if not scaled:
            return mean
        se = drops.std(axis=0, ddof=1) / math.sqrt(len(drops)) if len(drops) > 1 else np.zeros_like(mean)
        return np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)

    def used_features(self) -> set[int]:
        out: set[int] = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    # persistence
    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT, "version": MODEL_VERSION, "seed": self.seed,
            "hyperparams": asdict(self.params), "n_features": self.n_features,
            "feature_names": self.feature_names, "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ParseError("not a cryptoscope forest model (format/version mismatch)")
        forest = cls.from_params(Hyperparams(**d["hyperparams"]), d["seed"], d.get("feature_names"))
        forest.trees = [DecisionTree.from_dict(t) for t in d["trees"]]
        forest.n_features = d["n_features"]
        return forest

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RandomForest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None


def train_forest(X, y, hyperparams: Optional[Hyperparams] = None, seed: int = 0,
                 feature_names=None, workers: int = 1) -> RandomForest:
    forest = RandomForest.from_params(hyperparams or Hyperparams(), seed, feature_names)
    return forest.fit(X, y, workers=workers)


def predict_proba(forest: RandomForest, x) -> Union[float, np.ndarray]:
    return forest.predict_proba(x)


# --- evaluation --------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    def to_dict(self) -> dict:
        return asdict(self)


def metrics(y_true, y_pred) -> Metrics:
    """Precision / recall / F1 of the malicious (1) class; undefined ratios are 0."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    tn = int(np.sum((t == 0) & (p == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision, recall, f1, tp, fp, fn, tn)


def split_train_test(X, y, ratio: tuple[int, int] = (9, 1), stratified: bool = True,
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Return sorted ``(train_idx, test_idx)``; per-class test size is rounded half up."""
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    train_w, test_w = ratio
    frac = test_w / (train_w + test_w)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if stratified else [np.arange(n)]
    train, test = [], []
    for g in groups:
        perm = g[rng.permutation(len(g))]
        k = int(math.floor(len(g) * frac + 0.5))
        if k == 0 or k == len(g):
            raise InsufficientData(f"class of size {len(g)} cannot be split {train_w}:{test_w}")
        test.append(perm[:k])
        train.append(perm[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_folds(y, k: int, seed: int) -> list[np.ndarray]:
    y = np.asarray(y, dtype=np.int64)
    counts = np.bincount(y, minlength=2)
    if k < 2 or k > counts.min():
        raise InsufficientData(f"{k}-fold CV needs at least {k} samples per class, got {counts.tolist()}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    fold_of = np.empty(len(y), np.int64)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def expand_grid(grid) -> list[Hyperparams]:
    """Accept a list of Hyperparams / dicts, or a dict of value lists."""
    if isinstance(grid, dict):
        keys = sorted(grid)
        return [Hyperparams(**dict(zip(keys, vals))) for vals in product(*(grid[k] for k in keys))]
    return [g if isinstance(g, Hyperparams) else Hyperparams(**g) for g in grid]


DEFAULT_GRID = {"n_trees": [50, 100, 200], "max_depth": [8, 16, None]}


@dataclass
class CVResult:
    best: Hyperparams
    best_mean_f1: float
    fold_scores: list            # F1 per fold for the best grid point
    table: list = field(default_factory=list)   # (Hyperparams, mean F1, fold scores)


def _size_key(h: Hyperparams):
    return (h.n_trees, math.inf if h.max_depth is None else h.max_depth)


def cross_validate(X, y, grid=None, k: int = 10, seed: int = 0, workers: int = 1) -> CVResult:
    """Stratified k-fold grid search maximising mean F1; ties go to the smaller model."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    points = expand_grid(grid if grid is not None else DEFAULT_GRID)
    if not points:
        raise InsufficientData("empty hyperparameter grid")
    folds = stratified_folds(y, k, seed)
    fold_seeds = np.random.SeedSequence([seed, 0xC5]).generate_state(k)
    table = []
    for h in points:
        scores = []
        for f, test in enumerate(folds):
            train = np.setdiff1d(np.arange(len(y)), test)
            model = RandomForest.from_params(h, int(fold_seeds[f])).fit(X[train], y[train], workers=workers)
            scores.append(metrics(y[test], model.predict(X[test])).f1)
        table.append((h, float(np.mean(scores)), scores))
    best = min(table, key=lambda row: (-row[1], _size_key(row[0])))
    return CVResult(best[0], best[1], best[2], table)
