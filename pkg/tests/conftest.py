import pytest

_RESULTS: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion."""

    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _RESULTS[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_RESULTS):
            terminalreporter.write_line(_RESULTS[n])
