import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cryptoscope.errors import DegenerateLabels, DimensionMismatch, InsufficientData, ParseError
from cryptoscope.forest import (DecisionTree, Hyperparams, RandomForest, cross_validate, expand_grid, grow_tree,
                                metrics, split_train_test, stratified_folds, train_forest)


def _separable(n=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 2))
    return X, (X[:, 0] + X[:, 1] > 0).astype(int)


def _xor(jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    X = np.repeat(centers, 25, axis=0) + rng.normal(0, jitter, (100, 2))
    y = np.repeat([0, 1, 1, 0], 25)
    return X, y


def test_separable_training_f1():
    X, y = _separable()
    f = train_forest(X, y, Hyperparams(50), seed=1)
    assert metrics(y, f.predict(X)).f1 == 1.0


def test_xor_single_tree_depth_two():
    X, y = _xor()
    t = grow_tree(X, y, max_depth=2)
    assert np.array_equal((t.predict_proba(X) >= 0.5).astype(int), y)
    assert t.depth == 2


def test_jittered_xor_unbounded_tree():
    # greedy Gini can be lured by noise at the root, but depth is not capped here
    X, y = _xor(jitter=0.05)
    t = grow_tree(X, y)
    assert np.array_equal((t.predict_proba(X) >= 0.5).astype(int), y)


def test_constant_features_predict_majority():
    X = np.ones((30, 3))
    y = np.array([1] * 20 + [0] * 10)
    f = train_forest(X, y, Hyperparams(10), seed=0)
    assert np.all(f.predict(X) == 1)


def test_unbounded_tree_zero_training_error():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 4))
    y = rng.integers(0, 2, 150)
    t = grow_tree(X, y)
    assert np.array_equal((t.predict_proba(X) >= 0.5).astype(int), y)


def _node_rows(tree, X):
    rows = {0: np.arange(len(X))}
    for i in range(tree.n_nodes):
        if tree.feature[i] >= 0 and i in rows:
            r = rows[i]
            go_left = X[r, tree.feature[i]] <= tree.threshold[i]
            rows[tree.left[i]], rows[tree.right[i]] = r[go_left], r[~go_left]
    return rows


def _gini(y):
    if len(y) == 0:
        return 0.0
    p = y.mean()
    return 2 * p * (1 - p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_chosen_split_is_optimal_and_thresholds_between_values(seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (40, 3)).astype(float)
    y = rng.integers(0, 2, 40)
    t = grow_tree(X, y, max_depth=3)      # all features examined at every node
    rows = _node_rows(t, X)
    for i, r in rows.items():
        if t.feature[i] < 0:
            continue
        yr = y[r]
        best = -1.0
        for f in range(X.shape[1]):
            vals = np.unique(X[r, f])
            for a, b in zip(vals[:-1], vals[1:]):
                left = X[r, f] <= (a + b) / 2
                g = _gini(yr) - (left.sum() * _gini(yr[left]) + (~left).sum() * _gini(yr[~left])) / len(r)
                best = max(best, g)
        f = t.feature[i]
        left = X[r, f] <= t.threshold[i]
        chosen = _gini(yr) - (left.sum() * _gini(yr[left]) + (~left).sum() * _gini(yr[~left])) / len(r)
        assert chosen >= best - 1e-12
        vals = X[r, f]
        assert vals.min() < t.threshold[i] < vals.max()
        assert t.threshold[i] not in set(vals.tolist())


def test_leaf_probabilities_in_unit_interval():
    X, y = _separable(seed=4)
    f = train_forest(X, y, Hyperparams(20, 3), seed=2)
    p = f.predict_proba(np.random.default_rng(1).normal(0, 5, (500, 2)))
    assert np.all((p >= 0) & (p <= 1))


def test_predict_proba_is_mean_of_trees():
    leaf = lambda v: DecisionTree(np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([v]))
    f = RandomForest(3)
    f.trees, f.n_features = [leaf(1.0), leaf(0.0), leaf(1.0)], 2
    assert f.predict_proba(np.zeros(2)) == pytest.approx(2 / 3, abs=1e-4)
    f.trees = [leaf(1.0)] * 3
    f._packed = None
    assert f.predict_proba(np.zeros(2)) == 1.0


def test_forest_guards():
    with pytest.raises(ValueError):
        RandomForest(0)
    X, y = _separable()
    f = train_forest(X, y, Hyperparams(5), seed=0)
    with pytest.raises(DimensionMismatch):
        f.predict_proba(np.zeros((2, 3)))
    with pytest.raises(DegenerateLabels):
        train_forest(X, np.zeros(len(y), int))
    with pytest.raises(DegenerateLabels):
        train_forest(X[:3], np.array([0, 0, 1]))


def test_deterministic_and_thread_independent():
    X, y = _separable(300, 5)
    a = train_forest(X, y, Hyperparams(30), seed=9, workers=1)
    b = train_forest(X, y, Hyperparams(30), seed=9, workers=4)
    c = train_forest(X, y, Hyperparams(30), seed=10)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_model_json_roundtrip(tmp_path):
    X, y = _separable()
    f = train_forest(X, y, Hyperparams(10, 4), seed=3, feature_names=["a", "b"])
    f.save(tmp_path / "m.json")
    g = RandomForest.load(tmp_path / "m.json")
    assert g.feature_names == ["a", "b"] and g.params == f.params
    assert np.array_equal(g.predict_proba(X), f.predict_proba(X))
    (tmp_path / "bad.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ParseError):
        RandomForest.load(tmp_path / "bad.json")


def test_importances_favour_informative_feature():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 5))
    y = (X[:, 2] > 0).astype(int)
    imp = train_forest(X, y, Hyperparams(50), seed=0).feature_importances_
    assert imp.argmax() == 2 and imp.sum() == pytest.approx(1.0)


def test_metrics_examples():
    m = metrics([1, 0, 1, 0], [1, 0, 1, 0])
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)
    # 4 TP, 1 FP, 4 FN -> P=0.8, R=0.5
    m = metrics([1] * 8 + [0], [1] * 4 + [0] * 4 + [1])
    assert (m.precision, m.recall) == (0.8, 0.5)
    assert m.f1 == pytest.approx(0.6154, abs=1e-4)
    m = metrics([1, 1, 0], [0, 0, 0])
    assert (m.precision, m.f1) == (0.0, 0.0)


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_f1_harmonic_mean(pairs):
    t, p = zip(*pairs)
    m = metrics(t, p)
    assert m.tp + m.fp + m.fn + m.tn == len(pairs)
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
    else:
        assert m.f1 == 0.0


def test_split_train_test_balanced():
    y = np.array([0, 1] * 500)
    tr, te = split_train_test(np.zeros((1000, 1)), y, (9, 1), seed=3)
    assert (len(tr), len(te)) == (900, 100)
    assert np.bincount(y[tr]).tolist() == [450, 450] and np.bincount(y[te]).tolist() == [50, 50]
    assert not set(tr) & set(te)
    tr2, te2 = split_train_test(np.zeros((1000, 1)), y, (9, 1), seed=3)
    assert np.array_equal(te, te2)


def test_half_split():
    y = np.array([0, 1] * 5000)
    tr, te = split_train_test(np.zeros((10000, 1)), y, (1, 1), seed=0)
    assert len(tr) == len(te) == 5000


def test_tiny_data_cannot_be_cross_validated():
    X = np.zeros((9, 1))
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0])
    with pytest.raises(InsufficientData):
        cross_validate(X, y, [Hyperparams(5)], k=10)
    with pytest.raises(InsufficientData):
        split_train_test(np.zeros((3, 1)), np.array([0, 0, 1]), (9, 1))


def test_stratified_folds_partition():
    y = np.array([0] * 37 + [1] * 23)
    folds = stratified_folds(y, 10, 0)
    assert sorted(np.concatenate(folds).tolist()) == list(range(60))
    for f in folds:
        assert abs(y[f].sum() - 2.3) <= 1


def test_cross_validate_single_point():
    X, y = _separable()
    res = cross_validate(X, y, [Hyperparams(10, 4)], k=10, seed=0)
    assert res.best == Hyperparams(10, 4) and len(res.fold_scores) == 10
    again = cross_validate(X, y, [Hyperparams(10, 4)], k=10, seed=0)
    assert again.fold_scores == res.fold_scores


def test_cross_validate_ties_prefer_smaller_model():
    X = np.repeat([[0.0], [1.0]], 30, axis=0)
    y = np.repeat([0, 1], 30)
    res = cross_validate(X, y, {"n_trees": [20, 5], "max_depth": [None, 3]}, k=5, seed=0)
    assert res.best_mean_f1 == 1.0
    assert res.best == Hyperparams(5, 3)


def test_expand_grid():
    g = expand_grid({"n_trees": [50, 100], "max_depth": [8, None]})
    assert len(g) == 4 and Hyperparams(100, None) in g


def test_oob_importance_ranks_signal_over_noise():
    rng = np.random.default_rng(8)
    y = np.repeat([0, 1], 150)
    X = np.column_stack([y + 0.5 * rng.normal(size=300), rng.normal(size=(300, 3))])
    f = RandomForest(60, seed=2).fit(X, y)
    z = f.oob_importance(X, y, seed=1)
    raw = f.oob_importance(X, y, seed=1, scaled=False)
    assert np.argmax(z) == 0 and raw[0] > 0.1
    assert np.all(np.abs(raw[1:]) < raw[0])
    assert np.array_equal(z, f.oob_importance(X, y, seed=1, workers=4))


def test_oob_importance_unused_feature_is_zero():
    y = np.repeat([0, 1], 20)
    X = np.column_stack([y.astype(float), np.zeros(40)])
    f = RandomForest(10, seed=0).fit(X, y)
    assert f.oob_importance(X, y)[1] == 0.0


def test_oob_importance_needs_training_data():
    y = np.repeat([0, 1], 20)
    X = np.column_stack([y.astype(float), np.arange(40.0)])
    f = RandomForest(5, seed=0).fit(X, y)
    with pytest.raises(DimensionMismatch):
        f.oob_importance(X[:30], y[:30])
