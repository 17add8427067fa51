from pathlib import Path

import pytest

FIXTURES = Path(__file__).with_name("fixtures")
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def configs():
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
