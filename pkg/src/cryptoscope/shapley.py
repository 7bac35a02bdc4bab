"""Shapley-value explanations with an interventional value function.

``v(S)`` is the mean model output over a background set when the features
in ``S`` are taken from the explained vector and the rest from each
background row.  ``shap_exact`` enumerates all ``2**p`` coalitions;
``shap_sampling`` averages marginal contributions along random feature
orderings.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, EmptyInput, TooManyFeatures
from .parallel import ordered_map

MAX_EXACT_FEATURES = 20
ModelFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class Explanation:
    base_value: float
    phi: np.ndarray
    prediction: float
    x: np.ndarray
    names: tuple = ()

    @property
    def residual(self) -> float:
        return self.prediction - self.base_value - float(np.sum(self.phi))

    def to_dict(self) -> dict:
        names = self.names or tuple(f"f{i}" for i in range(len(self.phi)))
        return {"base": self.base_value, "prediction": self.prediction,
                "phi": dict(zip(names, self.phi.tolist())), "x": dict(zip(names, self.x.tolist()))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Explanation":
        names = tuple(d["phi"])
        return cls(d["base"], np.array([d["phi"][n] for n in names]), d["prediction"],
                   np.array([d["x"][n] for n in names]), names)

    def top(self, k: int = 10) -> list[tuple[str, float]]:
        """Largest |phi| contributions, signed, for a local explanation listing."""
        order = sorted(range(len(self.phi)), key=lambda i: (-abs(self.phi[i]), self.names[i] if self.names else i))
        return [(self.names[i] if self.names else f"f{i}", float(self.phi[i])) for i in order[:k]]


def _prepare(x, background) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if bg.shape[1] != len(x):
        raise DimensionMismatch(f"background has {bg.shape[1]} features, x has {len(x)}")
    if len(bg) == 0:
        raise EmptyInput("empty background set")
    return x, bg


def _eval(model_fn: ModelFn, rows: np.ndarray) -> np.ndarray:
    return np.asarray(model_fn(rows), dtype=np.float64).reshape(-1)


def coalition_values(model_fn: ModelFn, x, background, chunk_rows: int = 1 << 18) -> np.ndarray:
    """``v[mask]`` for every coalition bitmask (bit i set = feature i from x)."""
    x, bg = _prepare(x, background)
    p, nb = len(x), len(bg)
    masks = np.arange(1 << p, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(p)) & 1).astype(bool)
    v = np.empty(1 << p)
    step = max(1, chunk_rows // nb)
    for lo in range(0, 1 << p, step):
        sel = bits[lo:lo + step]
        Z = np.where(sel[:, None, :], x[None, None, :], bg[None, :, :])
        v[lo:lo + step] = _eval(model_fn, Z.reshape(-1, p)).reshape(len(sel), nb).mean(axis=1)
    return v


def shap_exact(model_fn: ModelFn, x, background, names: Sequence[str] = ()) -> Explanation:
    x, bg = _prepare(x, background)
    p = len(x)
    if p > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration supports at most {MAX_EXACT_FEATURES} features, got {p}")
    v = coalition_values(model_fn, x, bg)
    masks = np.arange(1 << p, dtype=np.int64)
    sizes = np.array([bin(m).count("1") for m in range(1 << p)]) if p else np.zeros(1, int)
    w = np.array([math.factorial(s) * math.factorial(p - s - 1) / math.factorial(p) for s in range(p)])
    phi = np.zeros(p)
    for i in range(p):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = np.sum(w[sizes[without]] * (v[without | bit] - v[without]))
    prediction = float(_eval(model_fn, x[None, :])[0])
    return Explanation(float(v[0]), phi, prediction, x, tuple(names))


def shap_sampling(model_fn: ModelFn, x, background, n_permutations: int = 100, seed: int = 0,
                  names: Sequence[str] = (), chunk_rows: int = 1 << 17) -> Explanation:
    """Permutation estimator; the floating residual left after averaging is
    spread over features in proportion to |phi| so efficiency holds exactly."""
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    x, bg = _prepare(x, background)
    p, nb = len(x), len(bg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A]))
    perms = np.array([rng.permutation(p) for _ in range(n_permutations)]).reshape(n_permutations, p)
    phi = np.zeros(p)
    base = float(_eval(model_fn, bg).mean())
    prediction = float(_eval(model_fn, x[None, :])[0])
    per_chunk = max(1, chunk_rows // (nb * max(p, 1)))
    for lo in range(0, n_permutations, per_chunk):
        block = perms[lo:lo + per_chunk]
        # prefix masks: row k of a permutation has its first k+1 features taken from x
        rank = np.argsort(block, axis=1)                        # position of each feature
        take = rank[:, None, :] <= np.arange(p)[None, :, None]  # (perm, step, feature)
        Z = np.where(take[:, :, None, :], x, bg[None, None, :, :])
        out = _eval(model_fn, Z.reshape(-1, p)).reshape(len(block), p, nb).mean(axis=2)
        prev = np.concatenate([np.full((len(block), 1), base), out[:, :-1]], axis=1)
        np.add.at(phi, block.ravel(), (out - prev).ravel())
    phi /= n_permutations
    phi = _spread_residual(phi, prediction - base - phi.sum())
    return Explanation(base, phi, prediction, x, tuple(names))


def _spread_residual(phi: np.ndarray, residual: float) -> np.ndarray:
    if residual == 0.0 or len(phi) == 0:
        return phi
    weights = np.abs(phi)
    total = weights.sum()
    weights = weights / total if total > 0 else np.full(len(phi), 1.0 / len(phi))
    return phi + residual * weights


def background_sample(X, n: int = 100, seed: int = 0) -> np.ndarray:
    """Fixed-seed subset of rows used as the explanation background."""
    X = np.asarray(X, dtype=np.float64)
    if len(X) <= n:
        return X.copy()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB6]))
    return X[np.sort(rng.choice(len(X), n, replace=False))]


def explain_many(model_fn: ModelFn, X, background, names: Sequence[str] = (), exact: bool = False,
                 n_permutations: int = 100, seed: int = 0, workers: int = 1) -> list[Explanation]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    seeds = np.random.SeedSequence([seed, 0xE7]).generate_state(max(len(X), 1))

    def one(i):
        if exact:
            return shap_exact(model_fn, X[i], background, names)
        return shap_sampling(model_fn, X[i], background, n_permutations, int(seeds[i]), names)

    return ordered_map(one, range(len(X)), workers=workers)


@dataclass
class GlobalImportance:
    names: tuple        # ranked, most important first
    values: np.ndarray  # mean |phi| in ranked order

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))

    def rank_of(self, name: str) -> int:
        return self.names.index(name) + 1

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "feature", "mean_abs_shap"])
            for i, (n, v) in enumerate(zip(self.names, self.values), 1):
                w.writerow([i, n, repr(float(v))])


def global_importance(explanations: Sequence[Explanation]) -> GlobalImportance:
    if not explanations:
        raise EmptyInput("global importance needs at least one explanation")
    p = len(explanations[0].phi)
    names = explanations[0].names or tuple(f"f{i}" for i in range(p))
    if any(len(e.phi) != p for e in explanations):
        raise DimensionMismatch("explanations have different feature counts")
    mean_abs = np.mean(np.abs(np.vstack([e.phi for e in explanations])), axis=0)
    order = sorted(range(p), key=lambda i: (-mean_abs[i], names[i]))
    return GlobalImportance(tuple(names[i] for i in order), mean_abs[order])
