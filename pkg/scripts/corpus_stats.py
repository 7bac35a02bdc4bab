"""Generate a synthetic corpus, scan it and write the corpus statistics tables.

    python3 scripts/corpus_stats.py --out runs/stats [--n 250] [--seed 11]
"""

import argparse
import tempfile

from cryptoscope.corpusgen import default_profiles, generate_corpus
from cryptoscope.experiments import scan_reports
from cryptoscope.report import aggregate, write_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--n", type=int, default=250, help="samples per profile")
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        gc = generate_corpus(default_profiles(), args.n, args.seed, tmp, workers=args.workers)
        reports = scan_reports(gc.manifest_path, workers=args.workers)
    for path in write_stats(aggregate(reports), args.out):
        print(path)


if __name__ == "__main__":
    main()
