import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_REPORT: dict[int, str] = {}


@pytest.fixture
def report():
    """Record the single pass/fail line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str, status: str | None = None):
        line = f"criterion {number:2d}: {status or ('PASS' if passed else 'FAIL')}  {detail}"
        _REPORT[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_REPORT):
            terminalreporter.write_line(_REPORT[number])
