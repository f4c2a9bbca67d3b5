import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record and assert one acceptance criterion; the line is repeated in the summary."""

    def record(number, ok, detail):
        line = f"CRITERION {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
