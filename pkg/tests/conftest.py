from fractions import Fraction as F

import pytest
from hypothesis import settings

from notevalue.score import ScoreNote

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

#: (criterion number, title, passed, detail) recorded by the acceptance suite
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line("criterion %2d  %-4s  %s  [%s]" % (num, "PASS" if ok else "FAIL", title, detail))


def make_notes(rows):
    """Notes from (onset, value, pitch) triples with ids in row order."""
    return [ScoreNote(i, F(on), F(val), p) for i, (on, val, p) in enumerate(rows)]


@pytest.fixture
def two_voice():
    # melody in eighths over a bass in halves
    rows = []
    for k in range(8):
        rows.append((F(k, 8), F(1, 8), 72 + (k % 3)))
    rows += [(F(0), F(1, 2), 48), (F(1, 2), F(1, 2), 50)]
    return make_notes(rows)
