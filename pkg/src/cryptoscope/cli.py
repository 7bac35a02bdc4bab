"""Command-line entry point: ``cryptoscope <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Progress goes to stderr; machine-readable output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import DataError, UsageError

DEFAULT_SEED = 11
log = logging.getLogger("cryptoscope")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _ratio(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(":"))
        if a <= 0 or b <= 0:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratio must look like 9:1, got {text!r}") from None
    return a, b


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default %(default)s)")
    common.add_argument("--workers", type=int, default=1, help="worker pool size; outputs do not depend on it")
    common.add_argument("--config", help="JSON file overriding option defaults and experiment settings")
    common.add_argument("--dry-run", action="store_true", help="print the effective configuration and exit")

    p = _Parser(prog="cryptoscope", description="Crypto API usage analytics and malware classification.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    s = sub.add_parser("scan", parents=[common], help="scan a corpus into per-sample reports")
    s.add_argument("--manifest", required=True)
    s.add_argument("--base-dir", help="directory sample paths are relative to (default: manifest's)")
    s.add_argument("--catalog", default="default")
    s.add_argument("--signatures", default="default")
    s.add_argument("--apis", default="default", help="baseline API package list")
    s.add_argument("--strict-labels", action="store_true", help="derive labels from vt_flags")
    s.add_argument("--out", required=True)

    s = sub.add_parser("aggregate", parents=[common], help="corpus statistics from reports")
    s.add_argument("reports")
    s.add_argument("--out", required=True)

    s = sub.add_parser("gen", parents=[common], help="generate a synthetic labeled corpus")
    s.add_argument("--profiles", default="default")
    s.add_argument("--n", type=int, default=250, help="samples per profile")
    s.add_argument("--out", required=True)

    s = sub.add_parser("featurize", parents=[common], help="crypto (and baseline) feature matrices")
    s.add_argument("reports")
    s.add_argument("--out", required=True, help="crypto feature CSV")
    s.add_argument("--baseline-out", help="baseline API feature CSV")

    s = sub.add_parser("select", parents=[common], help="Pearson + Boruta feature selection")
    s.add_argument("matrix")
    s.add_argument("--out", required=True)
    s.add_argument("--ratio", type=_ratio, default=(9, 1), help="fit on the training part of this split")
    s.add_argument("--all-rows", action="store_true", help="fit on every row instead")

    s = sub.add_parser("train", parents=[common], help="cross-validate, train and test a forest")
    s.add_argument("matrix")
    s.add_argument("--selection")
    s.add_argument("--ratio", type=_ratio, default=(9, 1))
    s.add_argument("--out", required=True)

    s = sub.add_parser("explain", parents=[common], help="Shapley explanations for test samples")
    s.add_argument("--model", required=True)
    s.add_argument("--matrix", required=True)
    s.add_argument("--ratio", type=_ratio, default=(9, 1))
    s.add_argument("--permutations", type=int, default=40)
    s.add_argument("--background", type=int, default=50)
    s.add_argument("--limit", type=int, default=100)
    s.add_argument("--exact", action="store_true")
    s.add_argument("--out", required=True)

    s = sub.add_parser("enhance", parents=[common], help="baseline enhancement trials")
    s.add_argument("--matrix", required=True, help="crypto feature CSV")
    s.add_argument("--baseline", required=True, help="baseline feature CSV")
    s.add_argument("--selection")
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--ratio", type=_ratio, default=(9, 1))
    s.add_argument("--out", required=True)

    sub.add_parser("version", parents=[common], help="print the version")
    return p


# --- subcommands -------------------------------------------------------------

def _experiment_config(args):
    from .experiments import ExperimentConfig
    cfg = ExperimentConfig.from_dict(args.experiment) if args.experiment else ExperimentConfig()
    cfg.seed, cfg.workers = args.seed, args.workers
    if getattr(args, "ratio", None):
        cfg.test_ratio = tuple(args.ratio)
    return cfg


def cmd_scan(args) -> int:
    from .catalog import load_catalog
    from .libfilter import default_signatures, load_signatures
    from .report import build_report, write_reports
    from .scanner import load_api_packages, read_manifest, scan_corpus
    catalog = load_catalog(args.catalog)
    sigs = default_signatures() if args.signatures == "default" else load_signatures(args.signatures)
    apis = load_api_packages(args.apis)
    entries = read_manifest(args.manifest, strict=args.strict_labels)
    base = args.base_dir or Path(args.manifest).parent
    log.info("scanning %d samples with %d worker(s)", len(entries), args.workers)
    scans = scan_corpus(entries, catalog, sigs, base, apis, workers=args.workers)
    for s in scans:
        for err in s.errors:
            log.warning("%s: %s", s.sample.id, err)
    paths = write_reports([build_report(s) for s in scans], args.out)
    log.info("wrote %d reports to %s", len(paths), args.out)
    return 0


def cmd_aggregate(args) -> int:
    from .report import aggregate, load_reports, write_stats
    reports = load_reports(args.reports)
    paths = write_stats(aggregate(reports), args.out)
    log.info("aggregated %d reports into %d tables", len(reports), len(paths))
    return 0


def cmd_gen(args) -> int:
    from .corpusgen import generate_corpus, load_profiles
    gc = generate_corpus(load_profiles(args.profiles), args.n, args.seed, args.out, workers=args.workers)
    log.info("generated %d samples under %s", len(gc.manifest), gc.root)
    return 0


def cmd_featurize(args) -> int:
    from .experiments import BaselineFeatureSet
    from .features import featurize_reports
    from .report import load_reports
    reports = load_reports(args.reports)
    featurize_reports(reports, workers=args.workers).to_csv(args.out)
    if args.baseline_out:
        BaselineFeatureSet.default().matrix(reports).to_csv(args.baseline_out)
    log.info("featurized %d reports", len(reports))
    return 0


def cmd_select(args) -> int:
    from .features import FeatureMatrix, select_features
    from .forest import split_train_test
    cfg = _experiment_config(args)
    m = FeatureMatrix.from_csv(args.matrix)
    if not args.all_rows:
        tr, _ = split_train_test(m.X, m.y, cfg.test_ratio, True, cfg.seed)
        m = m.subset(tr)
    sel = select_features(m, cfg.seed, cfg.pearson_threshold, cfg.boruta_alpha, cfg.boruta_max_iter,
                          n_trees=cfg.boruta_trees, workers=cfg.workers)
    sel.save(args.out)
    log.info("kept %d of %d candidate features", len(sel.kept), len(sel.candidates))
    return 0


def _split(m, cfg):
    from .forest import split_train_test
    tr, te = split_train_test(m.X, m.y, cfg.test_ratio, True, cfg.seed)
    return m.subset(tr), m.subset(te)


def cmd_train(args) -> int:
    from .features import FeatureMatrix, SelectionResult
    from .forest import cross_validate, metrics, train_forest
    cfg = _experiment_config(args)
    m = FeatureMatrix.from_csv(args.matrix)
    if args.selection:
        m = SelectionResult.load(args.selection).apply(m)
    train, test = _split(m, cfg)
    log.info("cross-validating %d grid points on %d rows", len(cfg.cv_grid.get("n_trees", [0])) *
             len(cfg.cv_grid.get("max_depth", [0])), len(train))
    cv = cross_validate(train.X, train.y, cfg.cv_grid, cfg.cv_folds, cfg.seed, cfg.workers)
    model = train_forest(train.X, train.y, cv.best, cfg.seed, feature_names=list(m.names), workers=cfg.workers)
    met = metrics(test.y, model.predict(test.X))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    summary = {"seed": cfg.seed, "cv_mean_f1": cv.best_mean_f1, "cv_fold_f1": cv.fold_scores,
               "best_hyperparams": {"n_trees": cv.best.n_trees, "max_depth": cv.best.max_depth},
               "test": met.to_dict()}
    (out / "metrics.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    log.info("test F1 %.4f", met.f1)
    return 0


def cmd_explain(args) -> int:
    from .features import FeatureMatrix
    from .forest import RandomForest
    from .shapley import background_sample, explain_many, global_importance
    cfg = _experiment_config(args)
    model = RandomForest.load(args.model)
    m = FeatureMatrix.from_csv(args.matrix)
    if model.feature_names:
        m = FeatureMatrix(tuple(model.feature_names), m.columns(model.feature_names), m.y, m.ids)
    train, test = _split(m, cfg)
    bg = background_sample(train.X, args.background, cfg.seed)
    k = min(args.limit, len(test))
    expl = explain_many(model, test.X[:k], bg, m.names, args.exact, args.permutations, cfg.seed, cfg.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "explanations.jsonl", "w", encoding="utf-8") as fh:
        for sid, e in zip(test.ids, expl):
            fh.write(json.dumps({"id": sid, **e.to_dict()}, sort_keys=True) + "\n")
    if expl:
        global_importance(expl).to_csv(out / "global_shap.csv")
    log.info("explained %d samples", len(expl))
    return 0


def cmd_enhance(args) -> int:
    from .experiments import run_enhancement, comparison_rows, write_comparison
    from .features import FeatureMatrix, SelectionResult
    cfg = _experiment_config(args)
    crypto = FeatureMatrix.from_csv(args.matrix)
    baseline = FeatureMatrix.from_csv(args.baseline)
    sel = SelectionResult.load(args.selection) if args.selection else None
    res = run_enhancement(crypto, baseline, cfg, n_trials=args.trials, selection=sel)
    res.save(args.out)
    write_comparison(Path(args.out) / "classifiers.csv", comparison_rows(None, res))
    s = res.summary()
    log.info("mean dF1 %+.4f (95%% CI %.4f..%.4f)", s["mean_delta_f1"], *s["delta_f1_ci"])
    return 0


def cmd_version(args) -> int:
    print(__version__)
    return 0


COMMANDS = {"scan": cmd_scan, "aggregate": cmd_aggregate, "gen": cmd_gen, "featurize": cmd_featurize,
            "select": cmd_select, "train": cmd_train, "explain": cmd_explain, "enhance": cmd_enhance,
            "version": cmd_version}


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def parse_args(argv: Sequence[str]):
    from .experiments import ExperimentConfig
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError(parser.format_usage())
    cfg = _load_config(args.config)
    if cfg:
        # config values act as defaults; explicit flags still win
        opts = {k.replace("-", "_"): v for k, v in cfg.items()}
        sub = parser._subparsers._group_actions[0].choices[args.command]
        dests = {a.dest for a in sub._actions}
        exp_keys = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(opts) - dests - exp_keys
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**{k: v for k, v in opts.items() if k in dests})
        args = parser.parse_args(argv)
        args.experiment = {k: v for k, v in opts.items() if k in exp_keys and k not in dests}
    else:
        args.experiment = {}
    return args


def _effective(args) -> dict:
    d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k != "dry_run"}
    if args.command in ("select", "train", "explain", "enhance"):
        d["experiment"] = _experiment_config(args).to_dict()
    return d


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:       # --help
            return int(exc.code or 0)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        if args.dry_run:
            print(json.dumps(_effective(args), indent=1, sort_keys=True, default=str))
            return 0
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
