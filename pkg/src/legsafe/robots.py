"""Reference robots: the approximate quadruped and small fixed-base chains."""
import numpy as np

from .model import Foot, Joint, Link, RobotModel, RobotState
from .modelfile import load_builtin

# hip roll, thigh, calf
STAND_POSE = np.array([0.0, 0.8, -1.6])
FOOT_NAMES = ("FR", "FL", "RR", "RL")

_POINT = 1e-12 * np.eye(3)   # SPD stand-in for a point mass


def quadruped():
    return load_builtin("a1_approx")


def pendulum(mass=1.0, length=1.0, axis=(0.0, 1.0, 0.0)):
    """Point mass on a massless rod, pivot at the world origin, hanging along -z."""
    link = Link("bob", mass, _POINT, np.array([0.0, 0.0, -length]))
    joint = Joint("pivot", "revolute", "world", "bob", np.asarray(axis, float),
                  actuated=True, torque_limit=1e3)
    return RobotModel([link], [joint], [Foot("tip", "bob", np.array([0.0, 0.0, -length]))],
                      name="pendulum")


def double_pendulum(m1=1.0, m2=1.0, l1=1.0, l2=1.0, actuated=False):
    """Planar two-link chain swinging in the x-z plane (point masses at the link ends)."""
    links = [Link("link1", m1, _POINT, np.array([0.0, 0.0, -l1])),
             Link("link2", m2, _POINT, np.array([0.0, 0.0, -l2]))]
    y = np.array([0.0, 1.0, 0.0])
    joints = [Joint("j1", "revolute", "world", "link1", y, actuated=actuated, torque_limit=1e3),
              Joint("j2", "revolute", "link1", "link2", y, translation=np.array([0.0, 0.0, -l1]),
                    actuated=actuated, torque_limit=1e3)]
    return RobotModel(links, joints, [Foot("tip", "link2", np.array([0.0, 0.0, -l2]))],
                      name="double_pendulum")


def stand_height(model, pose=STAND_POSE):
    """Base height that puts the feet exactly on z = 0 for a level trunk."""
    q = model.neutral_configuration()
    q[7:] = np.tile(pose, model.nva // 3)
    from .model import Kinematics, foot_position
    state = RobotState(q, np.zeros(model.nv))
    kin = Kinematics(model, state)
    return -np.mean([foot_position(model, state, i, kin)[2] for i in range(model.n_feet)])


def standing_state(model, height=None, pose=STAND_POSE, penetration=0.0):
    q = model.neutral_configuration()
    q[7:] = np.tile(pose, model.nva // 3)
    if height is None:
        height = stand_height(model, pose) - penetration
    q[2] = height
    return RobotState(q, np.zeros(model.nv), 0.0)
