import contextlib
import time

import pytest

_ACCEPTANCE = {}


class Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.notes = []

    def note(self, text):
        self.notes.append(text)


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the summary table."""

    @contextlib.contextmanager
    def _track(number, title):
        c = Criterion(number, title)
        start = time.perf_counter()
        try:
            yield c
        except BaseException as exc:
            c.note(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            _ACCEPTANCE[number] = ("FAIL", c, time.perf_counter() - start)
            raise
        _ACCEPTANCE[number] = ("PASS", c, time.perf_counter() - start)

    return _track


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, c, secs = _ACCEPTANCE[number]
        detail = "; ".join(c.notes)
        terminalreporter.write_line(f"{status}  #{number:<2} {c.title} ({secs:.1f} s)  {detail}")
