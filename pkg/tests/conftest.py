import pytest

_LINES = []


@pytest.fixture
def acceptance(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str = "") -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
