"""Nominal trotting controller: open-loop foot trajectories, per-leg inverse
kinematics and joint PD. It never looks at contact forces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ContactSet, RobotModel
from .robots import STAND_POSE
from .spatial import axis_angle_rot, cross3


@dataclass
class GaitSchedule:
    gait_period: float = 0.6
    duty: float = 0.5
    pairs: tuple = ((0, 3), (1, 2))
    step_length: float | None = None
    step_height: float = 0.10
    body_velocity_target: float = 0.0

    def __post_init__(self):
        if not 0 < self.duty < 1:
            raise ValueError("duty must lie in (0, 1)")
        if self.gait_period <= 0:
            raise ValueError("gait_period must be > 0")
        feet = [f for pair in self.pairs for f in pair]
        if len(self.pairs) != 2 or sorted(feet) != list(range(len(feet))):
            raise ValueError("trot needs two disjoint diagonal pairs covering all feet")

    @property
    def stride(self):
        """Foot travel (body frame) during one stance."""
        if self.step_length is not None:
            return self.step_length
        return self.body_velocity_target * self.duty * self.gait_period

    def offset(self, foot):
        return 0.0 if foot in self.pairs[0] else 0.5

    def local_phase(self, foot, phi):
        return (phi - self.offset(foot)) % 1.0

    def in_stance(self, foot, phi):
        return self.local_phase(foot, phi) < self.duty

    def swing_window(self, foot):
        """(start phase, length) of the foot's swing within the gait cycle."""
        return ((self.offset(foot) + self.duty) % 1.0, 1.0 - self.duty)


def contact_schedule(t, schedule: GaitSchedule) -> ContactSet:
    phi = (t % schedule.gait_period) / schedule.gait_period
    n = sum(len(p) for p in schedule.pairs)
    return ContactSet(tuple(f for f in range(n) if schedule.in_stance(f, phi)))


def swing_trajectory(foot, s, schedule: GaitSchedule, home, start=None):
    """Desired foot position, velocity and acceleration at swing phase s in [0, 1].

    The foot travels from ``start`` (default: the nominal liftoff point
    ``home - stride/2`` along x) to the touchdown point ``home + stride/2``
    horizontally with a cubic blend; touchdown height equals the liftoff
    height. The vertical offset ``step_height * sin^2(pi s)`` rides on top.
    Time derivatives use the swing duration ``(1 - duty) * gait_period``.
    """
    s = float(np.clip(s, 0.0, 1.0))
    dur = (1.0 - schedule.duty) * schedule.gait_period
    L, H = schedule.stride, schedule.step_height
    home = np.asarray(home, dtype=float)
    p0 = home + np.array([-L / 2, 0.0, 0.0]) if start is None else np.asarray(start, float)
    p1 = home + np.array([L / 2, 0.0, 0.0])
    p1[2] = p0[2]
    blend = 3 * s ** 2 - 2 * s ** 3
    dblend = (6 * s - 6 * s ** 2) / dur
    ddblend = (6 - 12 * s) / dur ** 2
    pos = p0 + (p1 - p0) * blend
    vel = (p1 - p0) * dblend
    acc = (p1 - p0) * ddblend
    pos[2] += H * np.sin(np.pi * s) ** 2
    vel[2] += H * np.pi * np.sin(2 * np.pi * s) / dur
    acc[2] += 2 * H * np.pi ** 2 * np.cos(2 * np.pi * s) / dur ** 2
    return pos, vel, acc


def stance_trajectory(foot, sigma, schedule: GaitSchedule, home):
    """Stance feet slide backwards at constant speed in the body frame."""
    dur = schedule.duty * schedule.gait_period
    L = schedule.stride
    pos = np.array(home, dtype=float)
    pos[0] += L / 2 - L * sigma
    vel = np.array([-L / dur, 0.0, 0.0])
    return pos, vel, np.zeros(3)


class LegChain:
    """Serial chain from the trunk to one foot, evaluated with the base at the origin."""

    def __init__(self, model: RobotModel, foot):
        chain = model.foot_chain(foot)
        self.joints = [i for i in chain if model.joints[i].type != "floating"]
        self.act_index = [model.actuated_joints.index(i) for i in self.joints]
        self.specs = [(model.joints[i].rotation, model.joints[i].translation,
                       model.joints[i].axis, model.joints[i].type) for i in self.joints]
        self.point = np.asarray(model.feet[foot].point, float)

    def fk(self, angles):
        rot, pos = np.eye(3), np.zeros(3)
        axes, origins, kinds = [], [], []
        for (r_pl, t_pl, axis, kind), qi in zip(self.specs, angles):
            pos = pos + rot @ t_pl
            rot = rot @ r_pl
            aw = rot @ axis
            axes.append(aw)
            origins.append(pos.copy())
            kinds.append(kind)
            if kind == "revolute":
                rot = rot @ axis_angle_rot(axis, qi)
            else:
                pos = pos + aw * qi
        foot = pos + rot @ self.point
        jac = np.empty((3, len(angles)))
        for k, (aw, o, kind) in enumerate(zip(axes, origins, kinds)):
            jac[:, k] = cross3(aw, foot - o) if kind == "revolute" else aw
        return foot, jac


@dataclass
class IkResult:
    angles: np.ndarray
    error: float
    iterations: int
    reachable: bool


def solve_leg_ik(chain: LegChain, target, initial, damping=1e-3, tol=1e-6, max_iter=50):
    """Damped least-squares iteration for one leg."""
    q = np.array(initial, dtype=float)
    err = np.inf
    for it in range(1, max_iter + 1):
        foot, jac = chain.fk(q)
        e = np.asarray(target) - foot
        err = np.linalg.norm(e)
        if err <= tol:
            return IkResult(q, err, it - 1, True)
        q = q + jac.T @ np.linalg.solve(jac @ jac.T + damping ** 2 * np.eye(3), e)
    foot, _ = chain.fk(q)
    err = np.linalg.norm(np.asarray(target) - foot)
    return IkResult(q, err, max_iter, err <= tol)


def inverse_kinematics(model: RobotModel, foot_targets, initial=None, chains=None):
    """Joint angles placing each foot at its base-frame target.

    Returns ``(angles, reachable)`` where ``reachable`` is False when any leg
    stopped at its nearest-reach configuration.
    """
    chains = chains or [LegChain(model, f) for f in range(model.n_feet)]
    q = np.tile(STAND_POSE, model.nva // 3) if initial is None else np.array(initial, float)
    ok = True
    for chain, target in zip(chains, foot_targets):
        res = solve_leg_ik(chain, target, q[chain.act_index])
        q[chain.act_index] = res.angles
        ok &= res.reachable
    return q, ok


def nominal_torque(q_a, dq_a, q_des, dq_des, kp, kd, tau_max, feedforward=None):
    """Joint PD, saturated at the torque limits."""
    u = kp * (q_des - q_a) + kd * (dq_des - dq_a)
    if feedforward is not None:
        u = u + feedforward
    return np.clip(u, -tau_max, tau_max)


class TrotController:
    """u_nominal(t, state) for an open-loop trot.

    Each swing starts where the foot actually is (base frame) at the first
    control step of the swing, so a stance leg compressed under load does
    not get driven into the ground at liftoff.
    """

    def __init__(self, model: RobotModel, schedule: GaitSchedule | None = None,
                 kp=60.0, kd=2.0, stand_pose=STAND_POSE):
        self.model = model
        self.schedule = schedule or GaitSchedule()
        self.kp, self.kd = kp, kd
        self.chains = [LegChain(model, f) for f in range(model.n_feet)]
        self.q_stand = np.tile(stand_pose, model.nva // 3)
        self.home = [chain.fk(self.q_stand[chain.act_index])[0] for chain in self.chains]
        self._q_guess = self.q_stand.copy()
        self._liftoff = [None] * model.n_feet

    def reset(self):
        self._q_guess = self.q_stand.copy()
        self._liftoff = [None] * self.model.n_feet

    def foot_targets(self, t, q_a=None):
        """Per-foot (position, velocity, acceleration) targets in the base frame.

        ``q_a`` (measured joint angles) is used to record liftoff points.
        """
        sch = self.schedule
        phi = (t % sch.gait_period) / sch.gait_period
        targets = []
        for f, home in enumerate(self.home):
            lp = sch.local_phase(f, phi)
            if lp < sch.duty:
                self._liftoff[f] = None
                targets.append(stance_trajectory(f, lp / sch.duty, sch, home))
            else:
                if self._liftoff[f] is None and q_a is not None:
                    chain = self.chains[f]
                    self._liftoff[f] = chain.fk(np.asarray(q_a)[chain.act_index])[0]
                targets.append(swing_trajectory(f, (lp - sch.duty) / (1 - sch.duty), sch, home,
                                                self._liftoff[f]))
        return targets

    def desired_joints(self, t, q_a=None):
        targets = self.foot_targets(t, q_a)
        q_des, _ = inverse_kinematics(self.model, [p for p, _, _ in targets],
                                      self._q_guess, self.chains)
        self._q_guess = q_des
        dq_des = np.zeros_like(q_des)
        for chain, (_, vel, _) in zip(self.chains, targets):
            _, jac = chain.fk(q_des[chain.act_index])
            dq_des[chain.act_index] = np.linalg.solve(jac, vel)
        return q_des, dq_des

    def __call__(self, state):
        m = self.model
        q_a = state.q[7:] if m.floating else state.q
        dq_a = state.v[m.actuated_v]
        q_des, dq_des = self.desired_joints(state.t, q_a)
        return nominal_torque(q_a, dq_a, q_des, dq_des, self.kp, self.kd, m.torque_limits)
