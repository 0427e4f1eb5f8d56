import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Mapping ``criterion -> summary line`` printed after the test run."""
    return request.config.stash.setdefault(_LINES, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
