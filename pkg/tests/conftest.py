"""Shared pytest hooks: acceptance criteria summary."""

from typing import List, Tuple

import pytest

ACCEPTANCE_RESULTS: List[Tuple[str, bool, str]] = []


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    """Collect one line per acceptance criterion for the final summary."""
    ACCEPTANCE_RESULTS.append((name, passed, detail))


@pytest.fixture
def acceptance():
    """Recorder callable handed to the acceptance tests."""
    return record_acceptance


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "PASS" if passed else "FAIL"
        suffix = f"  ({detail})" if detail else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")
