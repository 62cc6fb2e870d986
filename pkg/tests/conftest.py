import pytest

from _instances import binary_identity, random_instance


@pytest.fixture
def binary():
    return binary_identity()


@pytest.fixture(params=[0, 1, 2])
def rand_inst(request):
    return random_instance(request.param)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
