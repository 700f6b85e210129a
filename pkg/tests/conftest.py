import pytest

_RESULTS = {}


class AcceptanceRecorder:
    """Collects one verdict line per acceptance criterion."""

    def record(self, criterion: int, title: str, passed: bool, detail: str = "") -> None:
        _RESULTS[criterion] = (title, passed, detail)


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_RESULTS):
        title, passed, detail = _RESULTS[k]
        line = f"criterion {k} [{'PASS' if passed else 'FAIL'}] {title}"
        terminalreporter.write_line(line + (f": {detail}" if detail else ""))
        for extra in getattr(detail, "lines", ()):
            terminalreporter.write_line("    " + extra)
