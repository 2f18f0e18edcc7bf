from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

CRITERIA: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> None:
    """Store (and echo) the one-line verdict for an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])
