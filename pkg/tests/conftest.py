import pytest

RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[RESULTS] = {}


@pytest.fixture(scope="session")
def acceptance_results(request):
    """Criterion number -> (title, passed, detail); printed at the end of the run."""
    return request.config.stash[RESULTS]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n} {title}: {'PASS' if passed else 'FAIL'}  {detail}")
