"""Collects the acceptance verdicts and prints them after the test run."""

import pytest

_VERDICTS = []


@pytest.fixture(scope="session")
def verdicts():
    return _VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in _VERDICTS:
        terminalreporter.write_line(line)
