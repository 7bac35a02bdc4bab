import csv
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from cryptoscope.catalog import Category, default_catalog
from cryptoscope.errors import EmptyCorpus, ParseError
from cryptoscope.libfilter import default_signatures
from cryptoscope.report import (REFERENCE_CATEGORIES, REFERENCE_COHORTS, REFERENCE_TOTAL_CALL_SITES, CryptoReport,
                                aggregate, apk_share, build_report, category_share, load_reports,
                                obfuscation_rate, per_10k, percent, symmetric_distribution, write_reports,
                                write_stats)
from cryptoscope.scanner import read_manifest, scan_corpus


@pytest.mark.parametrize("dataset", ["CryptoLint-B12", "Androzoo-B12", "Androzoo-B16",
                                     "Androzoo-M12", "Androzoo-M16"])
def test_cohort_per_10k(dataset):
    n, sites, expected = REFERENCE_COHORTS[dataset]
    assert per_10k(sites, n) == expected


def test_binsight_row_is_not_reproducible():
    n, sites, printed = REFERENCE_COHORTS["BinSight-B16"]
    assert per_10k(sites, n) != printed


def test_category_shares():
    assert percent(424858, REFERENCE_TOTAL_CALL_SITES) == 65.8
    assert percent(165994, REFERENCE_TOTAL_CALL_SITES) == 25.7
    assert REFERENCE_CATEGORIES[Category.HASH][0] == 424858


@given(st.integers(0, 10**9), st.integers(1, 10**9))
def test_per_10k_is_truncated_fraction(num, den):
    assert per_10k(num, den) == int(Fraction(num * 10000, den))


@given(st.integers(0, 10**7), st.integers(1, 10**7))
def test_percent_matches_decimal_half_up(num, den):
    exact = Decimal(num * 100) / Decimal(den)
    assert percent(num, den) == float(exact.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def test_half_up_boundary():
    assert percent(1, 8) == 12.5
    assert percent(1, 16) == 6.3     # 6.25 rounds up
    assert percent(1, 2000) == 0.1   # 0.05 rounds up


def test_empty_denominators():
    with pytest.raises(EmptyCorpus):
        per_10k(1, 0)
    with pytest.raises(EmptyCorpus):
        aggregate([])


@pytest.fixture(scope="module")
def fixture_reports(adversarial_dir):
    entries = read_manifest(adversarial_dir / "manifest.jsonl")
    return [build_report(s) for s in scan_corpus(entries, default_catalog(), default_signatures(), adversarial_dir)]


def test_report_roundtrip(tmp_path, fixture_reports):
    write_reports(fixture_reports, tmp_path)
    back = load_reports(tmp_path)
    assert [r.to_dict() for r in back] == [r.to_dict() for r in sorted(fixture_reports, key=lambda r: r.id)]


def test_report_schema_checked():
    with pytest.raises(ParseError):
        CryptoReport.from_dict({"schema_version": 99})


def test_report_counts_match_call_sites(fixture_reports):
    assert sum(r.total_call_sites for r in fixture_reports) == 30
    for r in fixture_reports:
        resolved = sum(r.primitives.values())
        unresolved = sum(c.obfuscated + c.unknown for c in r.categories.values())
        assert resolved + unresolved == r.total_call_sites


def test_aggregate_partitions(fixture_reports):
    st_ = aggregate(fixture_reports)
    assert st_.overall.n_samples == len(fixture_reports)
    assert sum(g.call_sites for g in st_.groups.values()) == st_.overall.call_sites == 30
    assert sum(g.n_samples for g in st_.by_label.values()) == len(fixture_reports)
    shares = [category_share(st_, c) for c in Category]
    assert abs(sum(shares) - 100.0) <= 0.05 * len(shares)
    assert 0.0 <= apk_share(st_, Category.HASH) <= 100.0
    dist = symmetric_distribution(st_.overall)
    assert abs(sum(v for v in dist.values() if v is not None) - 100.0) <= 0.5


def test_obfuscation_rate_na_for_empty_category():
    r = CryptoReport("x", "benign", 2012)
    st_ = aggregate([r])
    assert obfuscation_rate(st_, Category.MAC) is None


def test_write_stats(tmp_path, fixture_reports):
    paths = write_stats(aggregate(fixture_reports), tmp_path)
    assert {p.name for p in paths} == {"cohorts.csv", "categories.csv", "symmetric.csv", "schemes.csv",
                                       "primitives.csv", "libraries.csv", "trends.csv"}
    rows = list(csv.DictReader(open(tmp_path / "cohorts.csv")))
    total = next(r for r in rows if r["dataset"] == "all")
    assert int(total["user_call_sites"]) == 30
    assert int(total["call_sites_per_10k"]) == per_10k(30, len(fixture_reports))
    trends = list(csv.DictReader(open(tmp_path / "trends.csv")))
    assert set(trends[0]) == {"year", "label", "metric", "value"}
    cats = list(csv.DictReader(open(tmp_path / "categories.csv")))
    assert any(r["category"] == "Sum" for r in cats)
