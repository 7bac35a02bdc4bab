"""Crypto feature vectors and two-stage feature selection.

Candidate features come in three sets:

* A: presence flags for bundled crypto libraries (Java and native);
* B: raw frequencies (constructor call sites per primitive and per API class,
  crypto imports, modes, paddings, default-mode Cipher schemes);
* C: aggregates over categories and over the whole sample, including
  square-root transformed totals.

Selection drops near-duplicate columns with a Pearson filter and then runs
Boruta (shadow features + forest importances + binomial tests).
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .catalog import Category, Mode, Padding, PatternCatalog, default_catalog
from .errors import DegenerateLabels, DimensionMismatch, InsufficientData, ParseError
from .forest import RandomForest
from .libfilter import PackageSignature, SignatureKind, default_signatures
from .parallel import ordered_map
from .report import CATEGORY_ORDER, CryptoReport, _IMPORT_CATEGORIES

SELECTION_SCHEMA = 1
CRYPTO_IMPORT_CLASSES = tuple(sorted(_IMPORT_CATEGORIES))
CRYPTO_WILDCARDS = ("java.security.*", "java.security.spec.*", "javax.crypto.*", "javax.crypto.spec.*")


def slug(text: str) -> str:
    return re.sub(r"[^0-9a-z]+", "_", text.lower()).strip("_")


def _cat_slug(c: Category) -> str:
    return slug(re.sub(r"(?<=[a-z])(?=[A-Z])", "_", c.value))


# --- catalog -----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureCatalog:
    """Ordered candidate feature names with their set (A, B or C)."""
    names: tuple[str, ...]
    sets: dict = field(compare=False)
    catalog: PatternCatalog = field(compare=False, repr=False)
    java_libs: tuple[str, ...] = ()
    native_libs: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def members(self, set_name: str) -> list[str]:
        return [n for n in self.names if self.sets[n] == set_name]


def build_feature_catalog(catalog: Optional[PatternCatalog] = None,
                          signatures: Optional[Sequence[PackageSignature]] = None) -> FeatureCatalog:
    catalog = catalog or default_catalog()
    signatures = default_signatures() if signatures is None else signatures
    java_libs = tuple(sorted({s.label for s in signatures if s.kind is SignatureKind.CRYPTO_LIB_JAVA}))
    native_libs = tuple(catalog.native_libs)
    sets: dict[str, str] = {}

    def add(set_name, *names):
        for n in names:
            if n in sets:
                raise ValueError(f"duplicate feature name {n}")
            sets[n] = set_name

    add("A", *(f"lib_{slug(l)}" for l in java_libs))
    add("A", *(f"native_{slug(l)}" for l in native_libs))

    add("B", *(f"ctor_{slug(p.name)}" for p in catalog.primitives))
    for c in catalog.class_names:
        s = slug(c)
        add("B", f"ctor_total_{s}", f"ctor_resolved_{s}", f"ctor_obfuscated_{s}", f"ctor_unknown_{s}")
    add("B", *(f"import_{slug(i)}" for i in CRYPTO_IMPORT_CLASSES))
    add("B", *(f"import_{slug(w[:-2])}_wildcard" for w in CRYPTO_WILDCARDS))
    add("B", *(f"mode_{slug(m.value)}" for m in Mode))
    add("B", *(f"padding_{slug(p.value)}" for p in Padding))
    sym = [p for p in catalog.primitives if p.category is Category.SYMMETRIC]
    add("B", *(f"default_mode_{slug(p.name)}" for p in sym))

    for c in CATEGORY_ORDER:
        s = _cat_slug(c)
        add("C", f"{s}_call_sites", f"{s}_obfuscated", f"{s}_unknown", f"{s}_distinct_primitives",
            f"{s}_weak_call_sites", f"classes_importing_{s}", f"sqrt_{s}_call_sites",
            f"{s}_share", f"{s}_obfuscation_rate", f"uses_{s}")
    add("C", "total_call_sites", "total_obfuscated", "total_unknown", "total_resolved",
        "distinct_primitives", "distinct_api_classes", "distinct_categories",
        "weak_call_sites", "weak_share", "obfuscated_share",
        "total_crypto_imports", "unique_crypto_imports",
        "sqrt_total_crypto_imports", "sqrt_unique_crypto_imports",
        "sqrt_total_call_sites", "sqrt_obfuscated_call_sites", "sqrt_weak_call_sites",
        "log1p_total_call_sites", "n_java_crypto_libs", "n_native_crypto_libs",
        "classes_importing_crypto", "default_mode_cipher_sites", "explicit_mode_cipher_sites",
        "distinct_schemes", "distinct_modes", "distinct_paddings",
        "sqrt_distinct_primitives", "sqrt_classes_importing_crypto", "obfuscated_api_classes",
        "max_category_call_sites", "dominant_category_share", "n_crypto_libs")
    add("C", *(f"sqrt_ctor_{slug(p.name)}" for p in catalog.primitives if p.weak))
    return FeatureCatalog(tuple(sets), sets, catalog, java_libs, native_libs)


_DEFAULT_FCAT: Optional[FeatureCatalog] = None


def default_feature_catalog() -> FeatureCatalog:
    global _DEFAULT_FCAT
    if _DEFAULT_FCAT is None:
        _DEFAULT_FCAT = build_feature_catalog()
    return _DEFAULT_FCAT


# --- featurization -----------------------------------------------------------

@dataclass
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    label: Optional[int] = None
    id: str = ""

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _ratio(a, b) -> float:
    return a / b if b else 0.0


def featurize(report: CryptoReport, fcat: Optional[FeatureCatalog] = None) -> FeatureVector:
    fcat = fcat or default_feature_catalog()
    cat = fcat.catalog
    v: dict[str, float] = {}
    java = {slug(l) for l in report.java_libs}
    native = {slug(l) for l in report.native_libs}
    for l in fcat.java_libs:
        v[f"lib_{slug(l)}"] = float(slug(l) in java)
    for l in fcat.native_libs:
        v[f"native_{slug(l)}"] = float(slug(l) in native)

    for p in cat.primitives:
        v[f"ctor_{slug(p.name)}"] = report.primitives.get(p.name, 0)
    for c in cat.class_names:
        s = slug(c)
        d = report.api_classes.get(c, {})
        total, obf, unk = d.get("call_sites", 0), d.get("obfuscated", 0), d.get("unknown", 0)
        v[f"ctor_total_{s}"] = total
        v[f"ctor_resolved_{s}"] = total - obf - unk
        v[f"ctor_obfuscated_{s}"] = obf
        v[f"ctor_unknown_{s}"] = unk
    for i in CRYPTO_IMPORT_CLASSES:
        v[f"import_{slug(i)}"] = report.imports.get(i, 0)
    for w in CRYPTO_WILDCARDS:
        v[f"import_{slug(w[:-2])}_wildcard"] = report.imports.get(w, 0)
    for m in Mode:
        v[f"mode_{slug(m.value)}"] = report.modes.get(m.value, 0)
    for p in Padding:
        v[f"padding_{slug(p.value)}"] = report.paddings.get(p.value, 0)
    sym = [p for p in cat.primitives if p.category is Category.SYMMETRIC]
    for p in sym:
        v[f"default_mode_{slug(p.name)}"] = report.schemes.get(f"{p.name}*", 0)

    weak = {p.name for p in cat.primitives if p.weak}
    total = report.total_call_sites
    for c in CATEGORY_ORDER:
        s = _cat_slug(c)
        cc = report.categories[c]
        n_weak = sum(n for prim, n in cc.primitives.items() if prim in weak)
        v[f"{s}_call_sites"] = cc.call_sites
        v[f"{s}_obfuscated"] = cc.obfuscated
        v[f"{s}_unknown"] = cc.unknown
        v[f"{s}_distinct_primitives"] = cc.distinct
        v[f"{s}_weak_call_sites"] = n_weak
        v[f"classes_importing_{s}"] = report.classes_importing.get(c.value, 0)
        v[f"sqrt_{s}_call_sites"] = math.sqrt(cc.call_sites)
        v[f"{s}_share"] = _ratio(cc.call_sites, total)
        v[f"{s}_obfuscation_rate"] = _ratio(cc.obfuscated, cc.call_sites)
        v[f"uses_{s}"] = float(cc.call_sites > 0)

    obf = sum(c.obfuscated for c in report.categories.values())
    unk = sum(c.unknown for c in report.categories.values())
    n_weak = sum(n for prim, n in report.primitives.items() if prim in weak)
    crypto_imports = {k: n for k, n in report.imports.items()
                      if k in _IMPORT_CATEGORIES or k in CRYPTO_WILDCARDS}
    n_imports = sum(crypto_imports.values())
    default_sites = sum(n for k, n in report.schemes.items() if k.endswith("*"))
    v.update({
        "total_call_sites": total, "total_obfuscated": obf, "total_unknown": unk,
        "total_resolved": total - obf - unk,
        "distinct_primitives": len(report.primitives),
        "distinct_api_classes": sum(1 for d in report.api_classes.values() if d.get("call_sites")),
        "distinct_categories": sum(1 for c in report.categories.values() if c.call_sites),
        "weak_call_sites": n_weak, "weak_share": _ratio(n_weak, total),
        "obfuscated_share": _ratio(obf, total),
        "total_crypto_imports": n_imports, "unique_crypto_imports": len(crypto_imports),
        "sqrt_total_crypto_imports": math.sqrt(n_imports),
        "sqrt_unique_crypto_imports": math.sqrt(len(crypto_imports)),
        "sqrt_total_call_sites": math.sqrt(total), "sqrt_obfuscated_call_sites": math.sqrt(obf),
        "sqrt_weak_call_sites": math.sqrt(n_weak), "log1p_total_call_sites": math.log1p(total),
        "n_java_crypto_libs": len(java), "n_native_crypto_libs": len(native),
        "classes_importing_crypto": sum(n for k, n in report.classes_importing.items()
                                        if k != Category.OTHER.value),
        "default_mode_cipher_sites": default_sites,
        "explicit_mode_cipher_sites": sum(report.schemes.values()) - default_sites,
        "distinct_schemes": len(report.schemes), "distinct_modes": len(report.modes),
        "distinct_paddings": len(report.paddings),
    })
    max_cat = max(c.call_sites for c in report.categories.values())
    v.update({
        "sqrt_distinct_primitives": math.sqrt(v["distinct_primitives"]),
        "sqrt_classes_importing_crypto": math.sqrt(v["classes_importing_crypto"]),
        "obfuscated_api_classes": sum(1 for d in report.api_classes.values() if d.get("obfuscated")),
        "max_category_call_sites": max_cat, "dominant_category_share": _ratio(max_cat, total),
        "n_crypto_libs": len(java) + len(native),
    })
    for p in cat.primitives:
        if p.weak:
            v[f"sqrt_ctor_{slug(p.name)}"] = math.sqrt(report.primitives.get(p.name, 0))

    values = np.array([v[n] for n in fcat.names], dtype=np.float64)
    return FeatureVector(fcat.names, values, int(report.malicious), report.id)


@dataclass
class FeatureMatrix:
    names: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.names, self.X[rows], self.y[rows], [self.ids[i] for i in rows])

    def columns(self, names: Sequence[str]) -> np.ndarray:
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise DimensionMismatch(f"unknown feature(s): {missing[:5]}")
        return self.X[:, [pos[n] for n in names]]

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if list(self.ids) != list(other.ids):
            raise DimensionMismatch("matrices describe different samples")
        return FeatureMatrix(self.names + other.names, np.hstack([self.X, other.X]), self.y, self.ids)

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *self.names, "label"])
            for sid, row, lab in zip(self.ids, self.X, self.y):
                w.writerow([sid, *(repr(float(x)) if x != int(x) else str(int(x)) for x in row), int(lab)])

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "id" or rows[0][-1] != "label":
            raise ParseError(f"{path}: expected header 'id,<features...>,label'")
        try:
            X = np.array([[float(x) for x in r[1:-1]] for r in rows[1:]], dtype=np.float64)
            y = np.array([int(r[-1]) for r in rows[1:]], dtype=np.int64)
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{path}: {exc}") from None
        names = tuple(rows[0][1:-1])
        return cls(names, X.reshape(len(rows) - 1, len(names)), y, [r[0] for r in rows[1:]])


def featurize_reports(reports: Sequence[CryptoReport], fcat: Optional[FeatureCatalog] = None,
                      workers: int = 1) -> FeatureMatrix:
    fcat = fcat or default_feature_catalog()
    vecs = ordered_map(lambda r: featurize(r, fcat), reports, workers=workers)
    X = np.vstack([v.values for v in vecs]) if vecs else np.zeros((0, len(fcat)))
    y = np.array([v.label for v in vecs], dtype=np.int64)
    return FeatureMatrix(fcat.names, X, y, [v.id for v in vecs])


# --- selection ---------------------------------------------------------------

class Verdict(str, Enum):
    CONFIRMED = "Confirmed"
    REJECTED = "Rejected"
    TENTATIVE = "Tentative"


def correlation_matrix(X) -> np.ndarray:
    """Pearson r between columns; any pair involving a constant column is 0."""
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(axis=0)
    norm = np.sqrt((Z * Z).sum(axis=0))
    const = norm == 0
    norm[const] = 1.0
    Z = Z / norm
    r = Z.T @ Z
    r[const, :] = 0.0
    r[:, const] = 0.0
    return np.clip(r, -1.0, 1.0)


@dataclass
class PearsonResult:
    kept: list            # column indices, ascending
    dropped: list         # (kept index, dropped index, r)


def pearson_filter(X, threshold: float = 0.95, seed: int = 0) -> PearsonResult:
    """Greedy pass over pairs (i < j) in column order.

    For a pair with |r| > threshold whose members are both alive, a seeded
    coin picks the victim and the survivor becomes protected; a protected
    column is never dropped later, so every dropped column leaves a kept
    partner behind.  Pairs of two protected columns are both kept.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise InsufficientData("correlation filter needs at least 2 samples")
    r = correlation_matrix(X)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC022]))
    p = X.shape[1]
    alive = np.ones(p, bool)
    protected = np.zeros(p, bool)
    dropped = []
    for i in range(p):
        if not alive[i]:
            continue
        for j in range(i + 1, p):
            if not alive[j] or abs(r[i, j]) <= threshold or (protected[i] and protected[j]):
                continue
            if protected[i] or protected[j]:
                victim, survivor = (j, i) if protected[i] else (i, j)
            else:
                victim, survivor = (i, j) if rng.random() < 0.5 else (j, i)
            alive[victim] = False
            protected[survivor] = True
            dropped.append((survivor, victim, float(r[i, j])))
            if victim == i:
                break
    return PearsonResult(np.flatnonzero(alive).tolist(), dropped)


@dataclass
class BorutaResult:
    verdicts: list        # Verdict per column
    hits: np.ndarray
    n_iter: int


MIN_SHADOWS = 5


def boruta(X, y, max_iter: int = 100, alpha: float = 0.05, seed: int = 0,
           n_trees: int = 100, max_depth: Optional[int] = None, workers: int = 1,
           importance: str = "permutation") -> BorutaResult:
    """All-relevant selection against permuted shadow copies.

    Each round permutes every not-yet-rejected column into a shadow (at least
    five, cycling columns if fewer remain), fits a forest on real + shadow
    columns and counts a hit for every real column whose importance beats the
    best shadow.  ``importance`` is the out-of-bag permutation z-score
    (``"permutation"``) or the impurity decrease (``"impurity"``); the latter
    rewards columns the trees merely overfit on.  After each round the
    undecided columns get a Bonferroni-corrected one-sided binomial test in
    each direction; undecided columns at the end are Tentative.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("Boruta needs both classes present")
    n, p = X.shape
    if n < 20:
        raise InsufficientData(f"Boruta needs at least 20 samples, got {n}")
    if importance not in ("permutation", "impurity"):
        raise ValueError(f"unknown importance {importance!r}")
    ss = np.random.SeedSequence([seed, 0xB0])
    iter_seeds = ss.generate_state(max_iter)
    status = np.full(p, -1)           # -1 undecided, 0 rejected, 1 confirmed
    hits = np.zeros(p, np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        active = np.flatnonzero(status != 0)
        rng = np.random.default_rng(int(iter_seeds[it - 1]))
        sources = np.resize(active, max(len(active), MIN_SHADOWS))
        shadows = np.column_stack([X[rng.permutation(n), j] for j in sources])
        Z = np.hstack([X[:, active], shadows])
        forest = RandomForest(n_trees, max_depth, seed=int(rng.integers(2**63)))
        forest.fit(Z, y, workers=workers)
        if importance == "permutation":
            imp = forest.oob_importance(Z, y, seed=int(rng.integers(2**63)), workers=workers)
        else:
            imp = forest.feature_importances_
        best_shadow = imp[len(active):].max()
        hits[active[imp[:len(active)] > best_shadow]] += 1

        undecided = np.flatnonzero(status == -1)
        level = alpha / p
        p_hi = stats.binom.sf(hits[undecided] - 1, it, 0.5)
        p_lo = stats.binom.cdf(hits[undecided], it, 0.5)
        status[undecided[p_hi < level]] = 1
        status[undecided[p_lo < level]] = 0
        if not np.any(status == -1):
            break
    names = {1: Verdict.CONFIRMED, 0: Verdict.REJECTED, -1: Verdict.TENTATIVE}
    return BorutaResult([names[int(s)] for s in status], hits, it)


@dataclass
class SelectionResult:
    candidates: list
    kept: list
    constant: list = field(default_factory=list)
    dropped_by_correlation: list = field(default_factory=list)   # [kept, dropped, r]
    verdicts: dict = field(default_factory=dict)
    seed: int = 0
    threshold: float = 0.95
    alpha: float = 0.05
    boruta_iterations: int = 0
    fallback: bool = False

    def apply(self, matrix: FeatureMatrix) -> FeatureMatrix:
        return FeatureMatrix(tuple(self.kept), matrix.columns(self.kept), matrix.y, matrix.ids)

    def to_dict(self) -> dict:
        return {"schema_version": SELECTION_SCHEMA, "candidates": list(self.candidates),
                "kept": list(self.kept), "constant": list(self.constant),
                "dropped_by_correlation": [list(t) for t in self.dropped_by_correlation],
                "verdicts": dict(self.verdicts), "seed": self.seed, "threshold": self.threshold,
                "alpha": self.alpha, "boruta_iterations": self.boruta_iterations,
                "fallback": self.fallback}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionResult":
        if d.get("schema_version") != SELECTION_SCHEMA:
            raise ParseError("unsupported selection schema_version")
        return cls(d["candidates"], d["kept"], d["constant"],
                   [tuple(t) for t in d["dropped_by_correlation"]], d["verdicts"], d["seed"],
                   d["threshold"], d["alpha"], d["boruta_iterations"], d.get("fallback", False))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SelectionResult":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from None


def select_features(matrix: FeatureMatrix, seed: int = 0, threshold: float = 0.95,
                    alpha: float = 0.05, max_iter: int = 100, keep_tentative: bool = True,
                    n_trees: int = 100, max_depth: Optional[int] = None,
                    workers: int = 1) -> SelectionResult:
    """Constant-column drop, Pearson filter, then Boruta; fit on the given rows only.

    If Boruta keeps nothing, the Pearson survivors are kept (``fallback``).
    """
    X, names = matrix.X, list(matrix.names)
    varying = np.flatnonzero(X.max(axis=0) > X.min(axis=0)) if len(X) else np.array([], int)
    constant = [names[i] for i in range(len(names)) if i not in set(varying.tolist())]
    pr = pearson_filter(X[:, varying], threshold, seed)
    survivors = varying[pr.kept]
    dropped = [(names[varying[a]], names[varying[b]], r) for a, b, r in pr.dropped]
    if len(survivors) == 0:
        return SelectionResult(names, [], constant, dropped, {}, seed, threshold, alpha, 0, True)
    br = boruta(X[:, survivors], matrix.y, max_iter, alpha, seed, n_trees, max_depth, workers)
    verdicts = {names[c]: v.value for c, v in zip(survivors, br.verdicts)}
    ok = {Verdict.CONFIRMED, Verdict.TENTATIVE} if keep_tentative else {Verdict.CONFIRMED}
    kept = [names[c] for c, v in zip(survivors, br.verdicts) if v in ok]
    fallback = not kept
    if fallback:
        kept = [names[c] for c in survivors]
    return SelectionResult(names, kept, constant, dropped, verdicts, seed, threshold, alpha,
                           br.n_iter, fallback)
