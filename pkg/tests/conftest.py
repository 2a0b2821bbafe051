import pytest

from hybridsim.graphs import gen_gnp_connected, gen_path


@pytest.fixture(scope="session")
def gnp64():
    return gen_gnp_connected(64, 0.1, 8, 1)


@pytest.fixture(scope="session")
def path3():
    return gen_path(3, 1, 0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
