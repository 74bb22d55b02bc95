import pytest

_RESULTS = {}


@pytest.fixture
def criterion(request):
    """Record ``(number, detail)`` for the acceptance summary; pass/fail comes from the test."""
    def record(number, detail):
        _RESULTS[number] = [request.node.nodeid, detail]
    return record


def pytest_runtest_logreport(report):
    if report.when == "call":
        for entry in _RESULTS.values():
            if entry[0] == report.nodeid and len(entry) == 2:
                entry.append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        _, detail, *passed = _RESULTS[number]
        status = "PASS" if passed and passed[0] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
