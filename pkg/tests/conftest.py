from importlib import resources
from pathlib import Path

import pytest

from metastable.model import load_model

FIXTURES = Path(str(resources.files("metastable") / "fixtures"))

# filled by tests/test_acceptance.py; printed once at the end of the session
ACCEPTANCE_LINES: dict = {}


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def vanishing():
    return load_model(FIXTURES / "friedrichs_vanishing.json")


@pytest.fixture(scope="session")
def fgr():
    return load_model(FIXTURES / "friedrichs_fgr.json")


@pytest.fixture(scope="session")
def two_channel():
    return load_model(FIXTURES / "two_channel_gauss.json")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
