import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def acceptance_report(request):
    """``report(number, ok, detail)`` records one summary line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, {})

    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
