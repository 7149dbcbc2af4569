import pytest

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(tag: str, ok: bool, detail: str):
        line = f"{tag} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[tag] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(_ACCEPTANCE, key=lambda t: int(t[1:])):
        terminalreporter.write_line(_ACCEPTANCE[tag])
