import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion_line():
    """Record one PASS/FAIL/SKIP line; all lines are echoed in the terminal summary."""

    def record(number: int, status: str, text: str) -> None:
        line = f"criterion {number}: {status}  {text}"
        _CRITERIA.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
