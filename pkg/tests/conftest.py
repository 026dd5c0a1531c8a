import numpy as np
import pytest

_REPORT = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def criterion(request):
    """Record a named acceptance outcome; printed as one line at the end of the run."""
    entry = {"name": request.node.name, "passed": False, "detail": "did not finish"}
    _REPORT.append(entry)

    def record(name, passed, detail=""):
        entry.update(name=name, passed=bool(passed), detail=detail)
        return passed

    yield record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for e in _REPORT:
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"{status}  {e['name']}: {e['detail']}")
