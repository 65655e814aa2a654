import os
from pathlib import Path

import pytest

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture
def golden():
    """Compare text with a checked-in golden file; UPDATE_GOLDEN=1 rewrites it."""

    def check(name, text):
        path = GOLDEN_DIR / name
        if os.environ.get("UPDATE_GOLDEN") or not path.exists():
            GOLDEN_DIR.mkdir(exist_ok=True)
            path.write_text(text)
        assert text == path.read_text()

    return check



# acceptance criteria report, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}
STARTED: set[int] = set()


def pytest_terminal_summary(terminalreporter):
    if not STARTED:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(STARTED):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n}: FAIL (raised before completing)"))
