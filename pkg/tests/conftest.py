import numpy as np
import pytest

from legsafe.model import RobotState
from legsafe.robots import STAND_POSE, quadruped
from legsafe.spatial import quat_exp


@pytest.fixture(scope="session")
def robot():
    return quadruped()


def random_state(model, rng, joint_spread=0.5, speed=1.0):
    """Random quadruped state around the standing pose."""
    q = model.neutral_configuration()
    q[:3] = rng.normal(0.0, 0.2, 3) + np.array([0.0, 0.0, 0.3])
    q[3:7] = quat_exp(rng.normal(0.0, 0.5, 3))
    q[7:] = np.tile(STAND_POSE, model.nva // 3) + rng.uniform(-joint_spread, joint_spread, model.nva)
    return RobotState(q, rng.normal(0.0, speed, model.nv))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
