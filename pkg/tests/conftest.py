import pytest

_VERDICTS: dict = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(key, ok, detail)``."""

    def record(key, ok, detail=""):
        _VERDICTS[key] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: int(k[1:])):
        ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
