import pytest

_ACCEPTANCE = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, passed, detail)``; printed in the terminal summary."""
    def record(n, passed, detail):
        _ACCEPTANCE[n] = (passed, detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
