import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    def record(name, passed, detail=''):
        _ACCEPTANCE[name] = (bool(passed), detail)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section('acceptance criteria')
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s[2:])):
        ok, detail = _ACCEPTANCE[name]
        tr.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
