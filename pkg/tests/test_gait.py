import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legsafe.gait import (GaitSchedule, LegChain, TrotController, contact_schedule,
                          inverse_kinematics, nominal_torque, solve_leg_ik, stance_trajectory,
                          swing_trajectory)
from legsafe.robots import STAND_POSE, standing_state
from legsafe.scenario import run_scenario
from legsafe.sim import Terrain


def test_schedule_pairs():
    sch = GaitSchedule()
    assert contact_schedule(0.25 * sch.gait_period, sch).active == (0, 3)
    assert contact_schedule(0.75 * sch.gait_period, sch).active == (1, 2)


def test_each_foot_in_stance_for_duty_fraction():
    for duty in (0.5, 0.6):
        sch = GaitSchedule(duty=duty)
        ts = (np.arange(6000) + 0.5) / 6000 * sch.gait_period
        for f in range(4):
            frac = np.mean([f in contact_schedule(t, sch) for t in ts])
            assert frac == pytest.approx(duty, abs=1e-3)


@pytest.mark.parametrize("kwargs", [dict(duty=0.0), dict(duty=1.0), dict(gait_period=0.0),
                                    dict(pairs=((0, 1), (1, 2))), dict(pairs=((0, 3),))])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        GaitSchedule(**kwargs)


HOME = np.array([0.18, -0.13, -0.3])


def test_swing_endpoints():
    sch = GaitSchedule(step_length=0.08, step_height=0.1)
    p0, v0, _ = swing_trajectory(0, 0.0, sch, HOME)
    p1, v1, _ = swing_trajectory(0, 1.0, sch, HOME)
    assert p0 == pytest.approx(HOME + [-0.04, 0, 0], abs=1e-15)
    assert p1 == pytest.approx(HOME + [0.04, 0, 0], abs=1e-15)
    assert np.abs(v0).max() <= 1e-12 and np.abs(v1).max() <= 1e-12
    mid, _, _ = swing_trajectory(0, 0.5, sch, HOME)
    assert mid[2] == pytest.approx(HOME[2] + 0.1)


def test_swing_touchdown_height_equals_liftoff_height():
    sch = GaitSchedule(step_length=0.08)
    start = HOME + np.array([-0.03, 0.01, 0.012])
    p1, _, _ = swing_trajectory(0, 1.0, sch, HOME, start=start)
    assert p1[2] == start[2]


def test_swing_derivatives_and_smoothness():
    sch = GaitSchedule(step_length=0.1, step_height=0.08)
    dur = (1 - sch.duty) * sch.gait_period
    ds = 1e-6
    for s in np.linspace(0.01, 0.99, 50):
        p_lo, v_lo, _ = swing_trajectory(0, s - ds, sch, HOME)
        p_hi, v_hi, _ = swing_trajectory(0, s + ds, sch, HOME)
        _, v, a = swing_trajectory(0, s, sch, HOME)
        assert (p_hi - p_lo) / (2 * ds * dur) == pytest.approx(v, abs=1e-6)
        assert (v_hi - v_lo) / (2 * ds * dur) == pytest.approx(a, abs=1e-4)
        # continuous second derivative
        _, _, a_next = swing_trajectory(0, s + 1e-9, sch, HOME)
        assert np.abs(a_next - a).max() < 1e-5


def test_stance_slides_backwards():
    sch = GaitSchedule(step_length=0.1)
    p0, v, _ = stance_trajectory(0, 0.0, sch, HOME)
    p1, _, _ = stance_trajectory(0, 1.0, sch, HOME)
    assert p0[0] - p1[0] == pytest.approx(0.1)
    assert v[0] == pytest.approx(-0.1 / (sch.duty * sch.gait_period))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 3), st.lists(st.floats(-0.4, 0.4), min_size=3, max_size=3))
def test_ik_round_trip_inside_workspace(robot, foot, offsets):
    chain = LegChain(robot, foot)
    angles = STAND_POSE + np.array(offsets)
    target, _ = chain.fk(angles)
    res = solve_leg_ik(chain, target, STAND_POSE)
    assert res.reachable and res.iterations <= 50
    reached, _ = chain.fk(res.angles)
    assert np.linalg.norm(reached - target) <= 1e-6


def test_ik_unreachable_target_is_flagged(robot):
    chain = LegChain(robot, 0)
    home, _ = chain.fk(STAND_POSE)
    res = solve_leg_ik(chain, home + np.array([0.0, 0.0, -1.0]), STAND_POSE)
    assert not res.reachable
    assert np.all(np.isfinite(res.angles))
    assert res.error > 0.5


def test_whole_body_ik(robot):
    chains = [LegChain(robot, f) for f in range(4)]
    q_true = np.tile(STAND_POSE, 4) + np.linspace(-0.2, 0.2, 12)
    targets = [c.fk(q_true[c.act_index])[0] for c in chains]
    q, ok = inverse_kinematics(robot, targets)
    assert ok
    for c, t in zip(chains, targets):
        assert np.linalg.norm(c.fk(q[c.act_index])[0] - t) <= 1e-6


def test_nominal_torque_pd_and_saturation():
    u = nominal_torque(np.zeros(2), np.zeros(2), np.array([0.1, 10.0]), np.array([1.0, 0.0]),
                       60.0, 2.0, np.array([33.5, 33.5]))
    assert u[0] == pytest.approx(60 * 0.1 + 2 * 1.0)
    assert u[1] == 33.5


def test_controller_is_force_unaware(robot):
    """Same kinematic state, different contact situation: same command."""
    ctrl_a, ctrl_b = TrotController(robot), TrotController(robot)
    s = standing_state(robot)
    assert np.array_equal(ctrl_a(s), ctrl_b(s))


def test_nominal_trot_sustains_ten_periods(robot):
    ctrl = TrotController(robot)
    log = run_scenario(robot, ctrl, Terrain(mu_true=0.8), 10 * ctrl.schedule.gait_period,
                       log_lambda=False)
    assert not log.fallen
    z = log.column("base_z")
    assert z.min() >= 0.5 * z[0]
