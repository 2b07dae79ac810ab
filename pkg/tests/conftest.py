import logging

import numpy as np
import pytest

from jointopt.geometry import FREE, SYMMETRY, TRACTION, DesignSpace, JointGeometry
from jointopt.meshing import triangulate
from jointopt.simulate import JointModel, SimConfig

logging.getLogger("jointopt").setLevel(logging.ERROR)


def rectangle_geometry(width=30.0, height=10.0, x0=-15.0):
    """A plain rectangle: free bottom/left, traction on the right, symmetry on top."""
    rect = np.array([(x0, 0.0), (x0 + width, 0.0), (x0 + width, height), (x0, height)])
    tags = [(FREE, -1), (TRACTION, -1), (SYMMETRY, -1), (FREE, -1)]
    iface = np.array([(0.0, 0.0), (0.0, height)])
    return JointGeometry(DesignSpace.SINGLE, np.zeros(3), iface, rect, rect, tags, tags)


@pytest.fixture(scope="session")
def rect_mesh():
    return triangulate(rectangle_geometry(4.0, 2.0, 0.0), "L", 0.5)


@pytest.fixture(scope="session")
def single_model():
    return JointModel("single", (2, 4, 5), SimConfig(mesh_step=1.0))


@pytest.fixture(scope="session")
def single_eval(single_model):
    return single_model.evaluate()


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(capsys):
    """record(n, ok, detail): print one PASS/FAIL line and keep it for the summary."""

    def record(n, ok, detail):
        line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
