import pytest

# (criterion id, status, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {cid}: {status} - {detail}")


@pytest.fixture
def record_criterion():
    def record(cid, ok, detail, status=None):
        status = status or ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES.append((cid, status, detail))
        print(f"criterion {cid}: {status} - {detail}")
        return ok
    return record
