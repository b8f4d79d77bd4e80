import pytest

from helpers import FIXTURES, load


@pytest.fixture
def chamber():
    return load("chamber.sml")


@pytest.fixture
def cooling():
    return load("ecal_cooling_dee.sml")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
