import pytest

from fgmerge.vehicle import Lane, SimParams, VehicleState


@pytest.fixture
def params():
    return SimParams()


def car(x, v, u=0.0, lane=Lane.MAIN, vid=0):
    return VehicleState(vid, lane, x, v, u)


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
