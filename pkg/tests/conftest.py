import pytest

_RESULTS_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS_KEY] = []


@pytest.fixture
def acceptance(request):
    """``acceptance(number, name, ok, detail)`` records a verdict line and asserts ``ok``."""
    lines = request.config.stash[_RESULTS_KEY]

    def report(number: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append((number, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_RESULTS_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda item: item[0]):
        terminalreporter.write_line(line)
