"""End-to-end studies: crypto-only classifier, explanations, baseline enhancement.

All randomness flows from ``ExperimentConfig.seed``; selection and model
search only ever see training rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .catalog import PatternCatalog, default_catalog
from .errors import (DegenerateFeatures, InsufficientBaselineFeatures, SplitMismatch,
                     ValidationError)
from .features import FeatureMatrix, SelectionResult, featurize_reports, select_features, slug
from .forest import (CVResult, Hyperparams, Metrics, RandomForest, cross_validate,
                     metrics, split_train_test, train_forest)
from .libfilter import PackageSignature, default_signatures
from .parallel import ordered_map
from .report import CryptoReport, build_report
from .scanner import ApiPackage, default_api_packages, read_manifest, scan_corpus
from .shapley import Explanation, GlobalImportance, background_sample, explain_many, global_importance

REFERENCE_CRYPTO_ONLY_F1 = 0.6240          # reference literal, real-data result
REFERENCE_ENHANCEMENT_DELTAS = {"precision": 0.0418, "recall": 0.0561, "f1": 0.0486}


@dataclass
class ExperimentConfig:
    seed: int = 11
    test_ratio: tuple = (9, 1)
    pearson_threshold: float = 0.95
    boruta_max_iter: int = 100
    boruta_alpha: float = 0.05
    boruta_trees: int = 100
    cv_folds: int = 10
    cv_grid: dict = field(default_factory=lambda: {"n_trees": [50, 100, 200], "max_depth": [8, 16, None]})
    n_background: int = 50
    n_permutations: int = 40
    n_explain: int = 100
    n_trials: int = 50
    baseline_k: int = 10
    trial_trees: int = 100
    trial_max_depth: Optional[int] = None
    workers: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["test_ratio"] = list(self.test_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "test_ratio" in d:
            d["test_ratio"] = tuple(d["test_ratio"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- corpus loading ----------------------------------------------------------

def scan_reports(manifest_path: Union[str, Path], base_dir=None, catalog: Optional[PatternCatalog] = None,
                 signatures: Optional[Sequence[PackageSignature]] = None,
                 api_packages: Optional[Sequence[ApiPackage]] = None, workers: int = 1) -> list[CryptoReport]:
    entries = read_manifest(manifest_path)
    base_dir = Path(manifest_path).parent if base_dir is None else base_dir
    scans = scan_corpus(entries, catalog or default_catalog(),
                        default_signatures() if signatures is None else signatures, base_dir,
                        default_api_packages() if api_packages is None else api_packages, workers=workers)
    return [build_report(s) for s in scans]


@dataclass(frozen=True)
class BaselineFeatureSet:
    """Per-sample call frequencies into non-crypto system API packages."""
    packages: tuple[str, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f"api_{slug(p)}" for p in self.packages)

    @classmethod
    def default(cls) -> "BaselineFeatureSet":
        return cls(tuple(p.package for p in default_api_packages()))

    def matrix(self, reports: Sequence[CryptoReport]) -> FeatureMatrix:
        X = np.array([[r.api_calls.get(p, 0) for p in self.packages] for r in reports],
                     dtype=np.float64).reshape(len(reports), len(self.packages))
        y = np.array([int(r.malicious) for r in reports], dtype=np.int64)
        return FeatureMatrix(self.names, X, y, [r.id for r in reports])


def _as_matrix(corpus) -> FeatureMatrix:
    return corpus if isinstance(corpus, FeatureMatrix) else featurize_reports(list(corpus))


def shuffled_labels(matrix: FeatureMatrix, seed: int) -> FeatureMatrix:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5F]))
    return FeatureMatrix(matrix.names, matrix.X, matrix.y[rng.permutation(len(matrix.y))], matrix.ids)


# --- crypto-only classifier --------------------------------------------------

@dataclass
class Predictions:
    ids: list
    y_true: np.ndarray
    y_pred: np.ndarray
    score: Optional[np.ndarray] = None


@dataclass
class CryptoOnlyResult:
    metrics: Metrics
    model: RandomForest
    selection: SelectionResult
    cv: CVResult
    train_idx: np.ndarray
    test_idx: np.ndarray
    predictions: Predictions
    explanations: list
    importance: Optional[GlobalImportance]
    seed: int

    def summary(self) -> dict:
        return {"seed": self.seed, "n_train": int(len(self.train_idx)), "n_test": int(len(self.test_idx)),
                "n_candidates": len(self.selection.candidates), "n_kept": len(self.selection.kept),
                "best_hyperparams": asdict(self.cv.best), "cv_mean_f1": self.cv.best_mean_f1,
                "test": self.metrics.to_dict(),
                "top_features": (list(self.importance.names[:10]) if self.importance else [])}

    def save(self, out: Union[str, Path]) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / n for n in ("summary.json", "selection.json", "model.json", "cv.csv",
                                   "predictions.csv", "explanations.jsonl")]
        paths[0].write_text(json.dumps(self.summary(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        self.selection.save(paths[1])
        self.model.save(paths[2])
        with open(paths[3], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_trees", "max_depth", "mean_f1", *(f"fold{i}" for i in range(len(self.cv.fold_scores)))])
            for h, mean, scores in self.cv.table:
                w.writerow([h.n_trees, "" if h.max_depth is None else h.max_depth, repr(mean), *map(repr, scores)])
        with open(paths[4], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label", "predicted", "score"])
            p = self.predictions
            for i, t, q, s in zip(p.ids, p.y_true, p.y_pred, p.score):
                w.writerow([i, int(t), int(q), repr(float(s))])
        with open(paths[5], "w", encoding="utf-8") as fh:
            for sid, e in zip(self.predictions.ids, self.explanations):
                fh.write(json.dumps({"id": sid, **e.to_dict()}, sort_keys=True) + "\n")
        if self.importance is not None:
            paths.append(out / "global_shap.csv")
            self.importance.to_csv(paths[-1])
        return paths


def run_crypto_only(corpus, config: Optional[ExperimentConfig] = None, seed: Optional[int] = None,
                    explain: bool = True) -> CryptoOnlyResult:
    """featurize -> split -> Pearson -> Boruta -> CV -> train -> test -> SHAP."""
    cfg = config or ExperimentConfig()
    seed = cfg.seed if seed is None else seed
    m = _as_matrix(corpus)
    if m.X.size == 0 or not np.any(m.X.max(axis=0) > m.X.min(axis=0)):
        raise DegenerateFeatures("every crypto feature is constant (crypto-free corpus?)")
    tr, te = split_train_test(m.X, m.y, tuple(cfg.test_ratio), True, seed)
    train, test = m.subset(tr), m.subset(te)
    sel = select_features(train, seed, cfg.pearson_threshold, cfg.boruta_alpha, cfg.boruta_max_iter,
                          n_trees=cfg.boruta_trees, workers=cfg.workers)
    if not sel.kept:
        raise DegenerateFeatures("no informative crypto feature varies on the training split")
    Xtr, Xte = sel.apply(train), sel.apply(test)
    cv = cross_validate(Xtr.X, Xtr.y, cfg.cv_grid, cfg.cv_folds, seed, cfg.workers)
    model = train_forest(Xtr.X, Xtr.y, cv.best, seed, feature_names=sel.kept, workers=cfg.workers)
    score = model.predict_proba(Xte.X)
    pred = (score >= 0.5).astype(np.int64)
    preds = Predictions(list(test.ids), test.y.copy(), pred, score)
    explanations, importance = [], None
    if explain and cfg.n_explain > 0:
        bg = background_sample(Xtr.X, cfg.n_background, seed)
        k = min(cfg.n_explain, len(Xte.X))
        explanations = explain_many(model, Xte.X[:k], bg, tuple(sel.kept), False,
                                    cfg.n_permutations, seed, cfg.workers)
        importance = global_importance(explanations)
    return CryptoOnlyResult(metrics(test.y, pred), model, sel, cv, tr, te, preds,
                            explanations, importance, seed)


# --- baseline enhancement ----------------------------------------------------

def draw_feature_tuples(n_features: int, k: int, n_trials: int, seed: int) -> list[tuple[int, ...]]:
    """``n_trials`` distinct sorted k-subsets of ``range(n_features)``, drawn up front."""
    if n_features < k:
        raise InsufficientBaselineFeatures(f"need at least {k} baseline features, have {n_features}")
    if math.comb(n_features, k) < n_trials:
        raise InsufficientBaselineFeatures(
            f"only {math.comb(n_features, k)} distinct {k}-subsets of {n_features} features for {n_trials} trials")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7B]))
    seen, out = set(), []
    while len(out) < n_trials:
        t = tuple(sorted(rng.choice(n_features, k, replace=False).tolist()))
        if t not in seen:
            seen.add(t)
            out.append(t)
    return out


def _rows_digest(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class Trial:
    index: int
    baseline_features: list
    baseline: Metrics
    enhanced: Metrics
    baseline_rows: str      # digest of the baseline training design
    enhanced_prefix: str    # digest of the enhanced design's baseline columns

    @property
    def delta(self) -> dict:
        return {k: getattr(self.enhanced, k) - getattr(self.baseline, k) for k in ("precision", "recall", "f1")}

    def to_dict(self) -> dict:
        return {"index": self.index, "baseline_features": self.baseline_features,
                "baseline": self.baseline.to_dict(), "enhanced": self.enhanced.to_dict(),
                "delta": self.delta, "baseline_rows": self.baseline_rows,
                "enhanced_prefix": self.enhanced_prefix}


@dataclass
class EnhancementResult:
    trials: list
    crypto_features: list
    seed: int
    n_trials: int
    ci_level: float = 0.95

    def deltas(self, key: str = "f1") -> np.ndarray:
        return np.array([t.delta[key] for t in self.trials])

    @property
    def n_features_enhanced(self) -> int:
        return len(self.trials[0].baseline_features) + len(self.crypto_features) if self.trials else 0

    def f1_ci(self) -> tuple[float, float]:
        d = self.deltas("f1")
        if len(d) < 2 or np.all(d == d[0]):
            return float(d.mean()), float(d.mean())
        res = stats.bootstrap((d,), np.mean, n_resamples=9999, confidence_level=self.ci_level,
                              method="percentile", random_state=np.random.default_rng([self.seed, 0xC1]))
        return float(res.confidence_interval.low), float(res.confidence_interval.high)

    def summary(self) -> dict:
        out = {"seed": self.seed, "n_trials": self.n_trials, "n_crypto_features": len(self.crypto_features)}
        for key in ("precision", "recall", "f1"):
            d = self.deltas(key)
            out[f"mean_delta_{key}"] = float(d.mean())
            out[f"stdev_delta_{key}"] = float(d.std(ddof=1)) if len(d) > 1 else 0.0
        out["delta_f1_ci"] = list(self.f1_ci())
        for side in ("baseline", "enhanced"):
            for key in ("precision", "recall", "f1"):
                out[f"{side}_mean_{key}"] = float(np.mean([getattr(getattr(t, side), key) for t in self.trials]))
        return out

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "crypto_features": list(self.crypto_features),
                "trials": [t.to_dict() for t in self.trials]}

    def save(self, out: Union[str, Path]) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "enhancement.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return [path]


def run_enhancement(crypto: FeatureMatrix, baseline: FeatureMatrix, config: Optional[ExperimentConfig] = None,
                    seed: Optional[int] = None, n_trials: Optional[int] = None,
                    selection: Optional[SelectionResult] = None) -> EnhancementResult:
    """Repeatedly sample ``baseline_k`` baseline features, then append the selected crypto features.

    One stratified split is fixed for all trials; crypto selection is fitted
    once on its training rows unless ``selection`` is supplied.
    """
    cfg = config or ExperimentConfig()
    seed = cfg.seed if seed is None else seed
    n_trials = cfg.n_trials if n_trials is None else n_trials
    if list(crypto.ids) != list(baseline.ids) or not np.array_equal(crypto.y, baseline.y):
        raise SplitMismatch("crypto and baseline matrices describe different samples")
    tuples = draw_feature_tuples(len(baseline.names), cfg.baseline_k, n_trials, seed)
    tr, te = split_train_test(crypto.X, crypto.y, tuple(cfg.test_ratio), True, seed)
    if selection is None:
        selection = select_features(crypto.subset(tr), seed, cfg.pearson_threshold, cfg.boruta_alpha,
                                    cfg.boruta_max_iter, n_trees=cfg.boruta_trees, workers=cfg.workers)
    C = crypto.columns(selection.kept) if selection.kept else np.zeros((len(crypto), 0))
    ytr, yte = crypto.y[tr], crypto.y[te]
    params = Hyperparams(cfg.trial_trees, cfg.trial_max_depth)
    trial_seeds = np.random.SeedSequence([seed, 0x7C]).generate_state(n_trials)

    def one(t):
        cols = list(tuples[t])
        B = baseline.X[:, cols]
        E = np.hstack([B, C])
        s = int(trial_seeds[t])
        base_model = train_forest(B[tr], ytr, params, s)
        enh_model = train_forest(E[tr], ytr, params, s)
        return Trial(t, [baseline.names[c] for c in cols],
                     metrics(yte, base_model.predict(B[te])), metrics(yte, enh_model.predict(E[te])),
                     _rows_digest(B[tr]), _rows_digest(E[tr][:, :len(cols)]))

    trials = ordered_map(one, range(n_trials), workers=cfg.workers)
    return EnhancementResult(trials, list(selection.kept), seed, n_trials)


# --- rescued samples ---------------------------------------------------------

@dataclass
class RescuedSample:
    id: str
    crypto_score: Optional[float]
    explanation: Optional[Explanation] = None

    def to_dict(self) -> dict:
        return {"id": self.id, "crypto_score": self.crypto_score,
                "explanation": self.explanation.to_dict() if self.explanation else None}


def rescue_analysis(baseline: Predictions, crypto: Predictions,
                    explanations: Optional[dict] = None) -> list[RescuedSample]:
    """Malicious test samples the baseline misses but the crypto-only model catches."""
    if list(baseline.ids) != list(crypto.ids) or not np.array_equal(baseline.y_true, crypto.y_true):
        raise SplitMismatch("models were evaluated on different test splits")
    explanations = explanations or {}
    out = []
    for i, sid in enumerate(crypto.ids):
        if crypto.y_true[i] == 1 and baseline.y_pred[i] == 0 and crypto.y_pred[i] == 1:
            score = float(crypto.score[i]) if crypto.score is not None else None
            out.append(RescuedSample(sid, score, explanations.get(sid)))
    return out


def comparison_rows(crypto_only: Optional[CryptoOnlyResult], enhancement: Optional[EnhancementResult]) -> list[list]:
    rows = []
    if crypto_only is not None:
        m = crypto_only.metrics
        rows.append(["crypto-only", len(crypto_only.selection.kept), m.precision, m.recall, m.f1])
    if enhancement is not None and enhancement.trials:
        s = enhancement.summary()
        k = len(enhancement.trials[0].baseline_features)
        rows.append(["baseline", k, s["baseline_mean_precision"], s["baseline_mean_recall"], s["baseline_mean_f1"]])
        rows.append(["baseline+crypto", enhancement.n_features_enhanced, s["enhanced_mean_precision"],
                     s["enhanced_mean_recall"], s["enhanced_mean_f1"]])
    return rows


def write_comparison(path: Union[str, Path], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["classifier", "n_features", "precision", "recall", "f1"])
        for r in rows:
            w.writerow([r[0], r[1], *(f"{v:.4f}" for v in r[2:])])
