import numpy as np
import pytest

from madispatch.topology import Topology, data_path, load_topology


@pytest.fixture(scope="session")
def desk():
    return load_topology(data_path("desk_sa8.json"))


@pytest.fixture(scope="session")
def desk5():
    return load_topology(data_path("desk_sa8_5ctl.json"))


@pytest.fixture
def small():
    """Three switches, two controllers; switch 2 sits next to controller 1."""
    lat = np.array([[0.001, 0.002, 0.010],
                    [0.008, 0.006, 0.001]])
    sw = np.array([[0.0, 0.001, 0.009],
                   [0.001, 0.0, 0.008],
                   [0.009, 0.008, 0.0]])
    return Topology(3, 2, np.array([6000.0, 9000.0]), lat, switch_latency=sw, name="small")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
