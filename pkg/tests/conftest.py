import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion."""

    def record(name, ok, detail):
        _LINES.append(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
        print(_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
