import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = pytest.StashKey[dict]()


class CriterionLog:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, store: dict):
        self.store = store

    def check(self, number: int, title: str, ok: bool, detail: str = "") -> None:
        self.store[number] = (title, bool(ok), detail)
        assert ok, f"criterion {number} ({title}) failed: {detail}"


@pytest.fixture
def criterion(request):
    return CriterionLog(request.config.stash.setdefault(_CRITERIA, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok, detail = results[number]
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
