"""Synthetic ground-truth data shared by unit and acceptance tests."""

import numpy as np


def informative_noise(seed, n=500, n_informative=5, n_noise=20, shift=1.0):
    """Balanced labels; the first ``n_informative`` columns are N(shift*y, 1), the rest pure N(0, 1)."""
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.repeat([0, 1], n // 2))
    X = rng.normal(size=(n, n_informative + n_noise))
    X[:, :n_informative] += shift * y[:, None]
    return X, y
