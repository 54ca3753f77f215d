import pytest

# acceptance criteria register (number, name, passed, detail) here
CRITERIA = []


@pytest.fixture
def report_criterion():
    def record(number, name, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        print(line)
        CRITERIA.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA):
            terminalreporter.write_line(line)
