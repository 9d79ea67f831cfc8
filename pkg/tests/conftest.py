import pytest

CRITERIA = {}


@pytest.fixture
def record():
    def _record(n, ok, detail):
        CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(CRITERIA[n])
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
