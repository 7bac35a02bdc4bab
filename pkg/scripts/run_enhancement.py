"""Baseline-enhancement trials on the default synthetic corpus.

    python3 scripts/run_enhancement.py --out runs/enhancement [--trials 50] [--seed 5]
"""

import argparse
import json
import tempfile
from pathlib import Path

from cryptoscope.corpusgen import default_profiles, generate_corpus
from cryptoscope.experiments import (BaselineFeatureSet, ExperimentConfig, comparison_rows, run_enhancement,
                                     scan_reports, write_comparison)
from cryptoscope.features import featurize_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=250, help="samples per profile")
    ap.add_argument("--corpus-seed", type=int, default=11)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = ExperimentConfig(seed=args.seed, workers=args.workers)
    with tempfile.TemporaryDirectory() as tmp:
        gc = generate_corpus(default_profiles(), args.n, args.corpus_seed, tmp, workers=args.workers)
        reports = scan_reports(gc.manifest_path, workers=args.workers)
    crypto = featurize_reports(reports, workers=args.workers)
    baseline = BaselineFeatureSet.default().matrix(reports)
    res = run_enhancement(crypto, baseline, cfg, n_trials=args.trials)
    res.save(args.out)
    write_comparison(Path(args.out) / "classifiers.csv", comparison_rows(None, res))
    print(json.dumps(res.summary(), indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
