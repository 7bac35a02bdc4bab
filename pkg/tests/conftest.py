from pathlib import Path

import pytest

from cryptoscope.corpusgen import default_profiles, generate_corpus
from cryptoscope.experiments import scan_reports

FIXTURES = Path(__file__).parent / "fixtures"
ADVERSARIAL = FIXTURES / "adversarial"


@pytest.fixture(scope="session")
def adversarial_dir():
    return ADVERSARIAL


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """40 samples per default profile, scanned once for the whole session."""
    root = tmp_path_factory.mktemp("small_corpus")
    gc = generate_corpus(default_profiles(), 40, 5, root)
    return gc, scan_reports(gc.manifest_path)


@pytest.fixture(scope="session")
def default_corpus_reports(tmp_path_factory):
    """The 500+500 default synthetic corpus (seed 11), scanned."""
    root = tmp_path_factory.mktemp("default_corpus")
    gc = generate_corpus(default_profiles(), 250, 11, root)
    return scan_reports(gc.manifest_path)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
