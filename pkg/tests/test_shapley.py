import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cryptoscope.errors import DimensionMismatch, EmptyInput, TooManyFeatures
from cryptoscope.forest import RandomForest
from cryptoscope.shapley import (Explanation, background_sample, coalition_values, explain_many,
                                 global_importance, shap_exact, shap_sampling)


def add(Z):
    return Z[:, 0] + Z[:, 1]


def mul(Z):
    return Z[:, 0] * Z[:, 1]


def _forest(seed, p=6, n=120, dummy=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    y = (X[:, 0] + X[:, 1] * X[:, 2] > 0).astype(int)
    if dummy is not None:
        X[:, dummy] = 0.0           # constant in training: never split on
    return RandomForest(15, max_depth=5, seed=seed).fit(X, y), X


def shapley_oracle(v, p):
    """Textbook Shapley sum over subsets, written independently of shap_exact."""
    phi = np.zeros(p)
    for i in range(p):
        others = [j for j in range(p) if j != i]
        for size in range(p):
            for S in itertools.combinations(others, size):
                m = sum(1 << j for j in S)
                w = math.factorial(size) * math.factorial(p - size - 1) / math.factorial(p)
                phi[i] += w * (v[m | (1 << i)] - v[m])
    return phi


def test_additive_model():
    e = shap_exact(add, [3, 5], [[0, 0]])
    assert e.base_value == 0 and np.allclose(e.phi, [3, 5], atol=0, rtol=0)


def test_interaction_split_symmetrically():
    e = shap_exact(mul, [2, 3], [[0, 0]])
    assert e.base_value == 0 and np.array_equal(e.phi, [3.0, 3.0])


def test_exact_matches_subset_oracle():
    f, X = _forest(1, p=5)
    x, bg = X[0], X[10:30]
    e = shap_exact(f, x, bg)
    assert np.allclose(e.phi, shapley_oracle(coalition_values(f, x, bg), 5), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_exact_efficiency(seed):
    f, X = _forest(seed % 1000)
    rng = np.random.default_rng(seed)
    e = shap_exact(f, rng.normal(size=X.shape[1]), X[:15])
    assert abs(e.base_value + e.phi.sum() - e.prediction) <= 1e-9


def test_dummy_feature_gets_exact_zero():
    f, X = _forest(3, dummy=4)
    assert 4 not in f.used_features()
    e = shap_exact(f, np.random.default_rng(0).normal(size=6), X[:20])
    assert e.phi[4] == 0.0


def test_additivity_of_summed_models():
    g, X = _forest(4)
    h, _ = _forest(5)
    x, bg = X[1], X[20:40]
    both = shap_exact(lambda Z: g(Z) + h(Z), x, bg)
    assert np.max(np.abs(both.phi - shap_exact(g, x, bg).phi - shap_exact(h, x, bg).phi)) <= 1e-9


def test_symmetry_for_identical_columns():
    e = shap_exact(add, [1.5, 1.5], [[0.2, 0.2], [1.0, 1.0]])
    assert e.phi[0] == e.phi[1]


def test_too_many_features():
    with pytest.raises(TooManyFeatures):
        shap_exact(lambda Z: Z[:, 0], np.zeros(21), np.zeros((1, 21)))


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        shap_exact(add, [1, 2], [[0, 0, 0]])
    with pytest.raises(EmptyInput):
        shap_exact(add, [1, 2], np.zeros((0, 2)))


def test_sampling_agrees_with_exact():
    f, X = _forest(3, p=8)
    x, bg = X[2], X[40:60]
    ex = shap_exact(f, x, bg)
    sa = shap_sampling(f, x, bg, n_permutations=2000, seed=3)
    assert np.max(np.abs(ex.phi - sa.phi)) <= 0.02


def test_sampling_efficiency_and_reproducibility():
    f, X = _forest(6)
    a = shap_sampling(f, X[0], X[5:25], n_permutations=1, seed=7)
    b = shap_sampling(f, X[0], X[5:25], n_permutations=1, seed=7)
    assert np.array_equal(a.phi, b.phi)
    assert abs(a.residual) <= 1e-9
    with pytest.raises(ValueError):
        shap_sampling(f, X[0], X[5:25], n_permutations=0)


def test_sampling_symmetry():
    e = shap_sampling(add, [2.0, 2.0], [[0.0, 0.0]], n_permutations=2000, seed=1)
    assert abs(e.phi[0] - e.phi[1]) <= 0.02


def test_sampling_exact_for_additive_model():
    rng = np.random.default_rng(2)
    w = rng.normal(size=7)
    bg = rng.normal(size=(10, 7))
    x = rng.normal(size=7)
    e = shap_sampling(lambda Z: Z @ w, x, bg, n_permutations=3, seed=0)
    assert np.allclose(e.phi, w * (x - bg.mean(axis=0)), atol=1e-12)


def test_explanation_json_round_trip():
    e = shap_exact(add, [3, 5], [[0, 0]], names=("a", "b"))
    d = e.to_dict()
    assert d["phi"] == {"a": 3.0, "b": 5.0} and d["base"] == 0.0 and d["prediction"] == 8.0
    back = Explanation.from_dict(d)
    assert back.names == ("a", "b") and np.array_equal(back.phi, e.phi)
    assert e.top(1) == [("b", 5.0)]


def test_global_importance_ranking(tmp_path):
    names = ("ctor_md5", "a", "b")
    model = lambda Z: 0.1 * Z[:, 0]
    X = np.random.default_rng(0).normal(size=(10, 3))
    ex = explain_many(model, X, X[:5], names=names, exact=True)
    gi = global_importance(ex)
    assert gi.names[0] == "ctor_md5" and gi.rank_of("ctor_md5") == 1
    assert np.all(gi.values >= 0) and sorted(gi.names) == sorted(names)
    assert gi.names[1:] == ("a", "b")            # exact ties broken by name
    gi.to_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "rank,feature,mean_abs_shap"


def test_single_explanation_importance_is_abs_phi():
    e = Explanation(0.0, np.array([-0.3, 0.1]), -0.2, np.zeros(2), ("u", "v"))
    assert global_importance([e]).as_dict() == {"u": 0.3, "v": 0.1}
    with pytest.raises(EmptyInput):
        global_importance([])


def test_explain_many_worker_invariant():
    f, X = _forest(9)
    a = explain_many(f, X[:4], X[50:60], n_permutations=5, seed=2, workers=1)
    b = explain_many(f, X[:4], X[50:60], n_permutations=5, seed=2, workers=4)
    assert all(np.array_equal(u.phi, v.phi) for u, v in zip(a, b))


def test_background_sample():
    X = np.arange(300.0).reshape(150, 2)
    bg = background_sample(X, 100, seed=1)
    assert bg.shape == (100, 2) and np.array_equal(bg, background_sample(X, 100, seed=1))
    assert np.array_equal(background_sample(X[:5], 100), X[:5])
