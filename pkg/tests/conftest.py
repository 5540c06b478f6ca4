import pytest

# (criterion, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((criterion, bool(passed), detail))
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


@pytest.fixture
def report_line():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
