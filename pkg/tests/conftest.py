import pytest

# lines recorded by the acceptance tests, echoed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(number, name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {name} :: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
