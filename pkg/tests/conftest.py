import sys
from pathlib import Path

# the shared reference implementations live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

import pytest

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion; printed in the terminal summary."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
