import pytest

_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; the line is printed now and in the terminal summary."""
    lines = request.config.stash.setdefault(_KEY, [])

    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
