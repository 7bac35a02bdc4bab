"""Generate the default synthetic corpus and run the crypto-only classifier study.

    python3 scripts/run_crypto_only.py --out runs/crypto_only [--n 250] [--seed 11] [--shuffled]
"""

import argparse
import json
import tempfile
import time
from pathlib import Path

from cryptoscope.corpusgen import default_profiles, generate_corpus
from cryptoscope.experiments import ExperimentConfig, run_crypto_only, scan_reports, shuffled_labels
from cryptoscope.features import featurize_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=250, help="samples per profile")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--config", help="ExperimentConfig JSON")
    ap.add_argument("--shuffled", action="store_true", help="also run the label-shuffled control")
    args = ap.parse_args()

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg.seed, cfg.workers = args.seed, args.workers
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        gc = generate_corpus(default_profiles(), args.n, args.seed, tmp, workers=args.workers)
        reports = scan_reports(gc.manifest_path, workers=args.workers)
    matrix = featurize_reports(reports, workers=args.workers)
    res = run_crypto_only(matrix, cfg)
    out = Path(args.out)
    res.save(out)
    summary = res.summary()
    if args.shuffled:
        control = run_crypto_only(shuffled_labels(matrix, args.seed), cfg, explain=False)
        summary["shuffled_label_test"] = control.metrics.to_dict()
        control.save(out / "shuffled")
    summary["seconds"] = round(time.perf_counter() - t0, 1)
    print(json.dumps(summary, indent=1, sort_keys=True))


if __name__ == "__main__":
    main()
