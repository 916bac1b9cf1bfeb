import pytest

from ksm.spectral import analyze, symmetric_channel

from . import _acceptance


@pytest.fixture(scope="session")
def bsc01():
    return analyze(symmetric_channel(0.1), 2)


@pytest.fixture(scope="session")
def bsc03():
    return analyze(symmetric_channel(0.3), 2)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_acceptance.RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {name} -- {detail}")
