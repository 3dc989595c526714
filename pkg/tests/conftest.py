import pytest

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    def record(number, name, passed, detail=""):
        ACCEPTANCE_LINES.append((number, f"CRITERION {number:>2} {'PASS' if passed else 'FAIL'}  {name}  {detail}"))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
