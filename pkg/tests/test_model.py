import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_state
from legsafe.model import (ContactSet, Kinematics, ModelError, RobotState, contact_jacobian,
                           foot_position, foot_velocity, forward_dynamics, generalized_force,
                           integrate, integrate_configuration, jacobian_dot_v, kinetic_energy,
                           mass_matrix, nonlinear_effects, potential_energy, rnea)
from legsafe.modelfile import ModelFileError, parse_model
from legsafe.robots import double_pendulum, pendulum

G = 9.81


def two_link_mass_matrix(m1, m2, l1, l2, q2):
    """Lagrangian closed form for point masses at the link ends."""
    c = np.cos(q2)
    m11 = m1 * l1 ** 2 + m2 * (l1 ** 2 + l2 ** 2 + 2 * l1 * l2 * c)
    m12 = m2 * (l2 ** 2 + l1 * l2 * c)
    return np.array([[m11, m12], [m12, m2 * l2 ** 2]])


def test_pendulum_mass_matrix_is_m_l_squared():
    model = pendulum(mass=2.0, length=0.7)
    state = RobotState(np.array([0.3]), np.zeros(1))
    assert mass_matrix(model, state) == pytest.approx(np.array([[2.0 * 0.49]]), abs=1e-12)


def test_pendulum_gravity_terms():
    model = pendulum(mass=2.0, length=0.7)
    hanging = nonlinear_effects(model, RobotState(np.array([0.0]), np.zeros(1)))
    assert hanging == pytest.approx([0.0], abs=1e-12)
    horizontal = nonlinear_effects(model, RobotState(np.array([np.pi / 2]), np.zeros(1)))
    assert horizontal == pytest.approx([2.0 * G * 0.7], abs=1e-10)


@pytest.mark.parametrize("q2", [0.0, 0.4, -1.3, 2.5])
def test_two_link_mass_matrix_matches_closed_form(q2):
    m1, m2, l1, l2 = 1.3, 0.7, 0.9, 0.6
    model = double_pendulum(m1, m2, l1, l2)
    state = RobotState(np.array([0.2, q2]), np.zeros(2))
    expected = two_link_mass_matrix(m1, m2, l1, l2, q2)
    assert np.abs(mass_matrix(model, state) - expected).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_mass_matrix_symmetric_positive_definite(robot, seed):
    state = random_state(robot, np.random.default_rng(seed))
    M = mass_matrix(robot, state)
    assert np.abs(M - M.T).max() <= 1e-10
    np.linalg.cholesky(M)


def test_inverse_forward_round_trip(robot):
    rng = np.random.default_rng(3)
    all_feet = ContactSet(range(robot.n_feet))
    for _ in range(25):
        state = random_state(robot, rng)
        u = rng.uniform(-20, 20, robot.nva)
        lam = rng.normal(0, 30, (robot.n_feet, 3))
        kin = Kinematics(robot, state)
        vdot = forward_dynamics(robot, state, u, lam, kin=kin)
        # independent route: full recursive Newton-Euler at the computed acceleration
        tau_id = rnea(robot, state, vdot, kin=kin)
        J = contact_jacobian(robot, state, all_feet, kin)
        resid = tau_id - robot.B @ u - J.T @ lam.reshape(-1)
        assert np.abs(resid).max() <= 1e-8


def test_rnea_equals_mass_matrix_times_vdot_plus_h(robot):
    rng = np.random.default_rng(4)
    state = random_state(robot, rng)
    vdot = rng.normal(size=robot.nv)
    lhs = rnea(robot, state, vdot)
    rhs = mass_matrix(robot, state) @ vdot + nonlinear_effects(robot, state)
    assert np.abs(lhs - rhs).max() <= 1e-9


def test_zero_configuration_foot_position_composes_placements():
    model = double_pendulum(l1=0.9, l2=0.6)
    state = RobotState(np.zeros(2), np.zeros(2))
    assert foot_position(model, state, 0) == pytest.approx([0.0, 0.0, -1.5], abs=1e-14)


def test_quadruped_zero_configuration_foot_position(robot):
    q = robot.neutral_configuration()
    state = RobotState(q, np.zeros(robot.nv))
    # hip offset + hip-to-thigh offset + thigh + calf, all straight down
    assert foot_position(robot, state, 0) == pytest.approx([0.183, -0.127, -0.4], abs=1e-12)
    assert foot_position(robot, state, 3) == pytest.approx([-0.183, 0.127, -0.4], abs=1e-12)


def test_foot_velocity_zero_at_rest(robot):
    state = random_state(robot, np.random.default_rng(0), speed=0.0)
    for f in range(robot.n_feet):
        assert np.all(foot_velocity(robot, state, f) == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_foot_velocity_matches_finite_difference(robot, seed):
    state = random_state(robot, np.random.default_rng(seed))
    delta = 1e-7
    q2 = integrate_configuration(robot, state.q, state.v * delta)
    moved = RobotState(q2, state.v)
    for f in range(robot.n_feet):
        fd = (foot_position(robot, moved, f) - foot_position(robot, state, f)) / delta
        v = foot_velocity(robot, state, f)
        assert np.linalg.norm(fd - v) <= 1e-5 * max(np.linalg.norm(v), 1.0)


def test_foot_velocity_equals_jacobian_rows(robot):
    state = random_state(robot, np.random.default_rng(5))
    feet = ContactSet(range(robot.n_feet))
    J = contact_jacobian(robot, state, feet)
    V = np.concatenate([foot_velocity(robot, state, f) for f in feet.active])
    assert np.abs(J @ state.v - V).max() <= 1e-13


def test_contact_jacobian_order_follows_foot_index(robot):
    state = random_state(robot, np.random.default_rng(6))
    a = contact_jacobian(robot, state, ContactSet((3, 0)))
    b = contact_jacobian(robot, state, ContactSet((0, 3)))
    assert ContactSet((3, 0)).active == (0, 3)
    assert np.array_equal(a, b)
    assert a.shape == (6, robot.nv)


def test_jacobian_dot_v_zero_at_rest(robot):
    state = random_state(robot, np.random.default_rng(7), speed=0.0)
    assert np.all(jacobian_dot_v(robot, state, ContactSet(range(4))) == 0.0)


def test_jacobian_dot_v_matches_finite_difference(robot):
    rng = np.random.default_rng(8)
    feet = ContactSet(range(robot.n_feet))
    dt = 1e-6
    for _ in range(10):
        state = random_state(robot, rng)
        vdot = rng.normal(size=robot.nv)
        J = contact_jacobian(robot, state, feet)
        drift = jacobian_dot_v(robot, state, feet)
        later = integrate(robot, state, vdot, dt)
        earlier = integrate(robot, state, vdot, -dt)
        Jv = [contact_jacobian(robot, s, feet) @ s.v for s in (later, earlier)]
        fd = (Jv[0] - Jv[1]) / (2 * dt)
        assert np.abs(fd - J @ vdot - drift).max() <= 1e-4


def test_pinned_stance_foot_has_zero_acceleration(robot):
    """Constrained forward dynamics with one pinned foot: J vdot + Jdot v = 0."""
    rng = np.random.default_rng(9)
    state = random_state(robot, rng)
    c = ContactSet((1,))
    kin = Kinematics(robot, state)
    M = mass_matrix(robot, state, kin)
    J = contact_jacobian(robot, state, c, kin)
    rhs_free = generalized_force(robot, state, rng.normal(size=12), kin=kin) \
        - nonlinear_effects(robot, state, kin=kin)
    K = np.block([[M, -J.T], [J, np.zeros((3, 3))]])
    sol = np.linalg.solve(K, np.concatenate([rhs_free, -jacobian_dot_v(robot, state, c, kin)]))
    acc = J @ sol[:robot.nv] + jacobian_dot_v(robot, state, c, kin)
    assert np.abs(acc).max() <= 1e-9


def test_double_pendulum_energy_drift_short():
    model = double_pendulum()
    state = RobotState(np.array([1.0, -0.5]), np.zeros(2))
    e0 = kinetic_energy(model, state) + potential_energy(model, state)
    for _ in range(5000):
        state = integrate(model, state, forward_dynamics(model, state, np.zeros(0)), 1e-4)
    e1 = kinetic_energy(model, state) + potential_energy(model, state)
    assert abs(e1 - e0) / abs(e0) < 5e-3


def test_integrate_keeps_unit_quaternion(robot):
    state = random_state(robot, np.random.default_rng(10), speed=5.0)
    for _ in range(100):
        state = integrate(robot, state, np.zeros(robot.nv), 0.01)
    assert abs(np.linalg.norm(state.q[3:7]) - 1.0) <= 1e-12


def test_state_dimension_mismatch_is_rejected(robot):
    with pytest.raises(ModelError):
        mass_matrix(robot, RobotState(np.zeros(5), np.zeros(4)))


def test_non_unit_quaternion_is_rejected(robot):
    q = robot.neutral_configuration()
    q[3] = 2.0
    with pytest.raises(ModelError):
        mass_matrix(robot, RobotState(q, np.zeros(robot.nv)))


def test_quadruped_dimensions(robot):
    assert robot.nv == 18 and robot.nva == 12 and robot.nq == 19
    assert robot.total_mass == pytest.approx(12.0)
    assert np.all(robot.torque_limits > 0)


def test_parser_rejects_two_parents_with_line_number():
    text = """robot r
link a mass=1 inertia=1,1,1
link b mass=1 inertia=1,1,1
joint j1 type=revolute parent=world child=a axis=0,1,0 limit=1
joint j2 type=revolute parent=a child=b axis=0,1,0 limit=1
joint j3 type=revolute parent=world child=b axis=0,1,0 limit=1
"""
    with pytest.raises(ModelFileError) as err:
        parse_model(text)
    assert err.value.line == 6


def test_parser_rejects_cycle():
    text = """link a mass=1 inertia=1,1,1
link b mass=1 inertia=1,1,1
joint j1 type=revolute parent=b child=a limit=1
joint j2 type=revolute parent=a child=b limit=1
"""
    with pytest.raises(ModelError):
        parse_model(text)


@pytest.mark.parametrize("line", [
    "link a mass=-1 inertia=1,1,1",
    "link a mass=1 inertia=1,-1,1",
    "link a mass=1 inertia=1,1",
])
def test_parser_rejects_bad_links(line):
    with pytest.raises(ModelFileError) as err:
        parse_model(line + "\n")
    assert err.value.line == 1


def test_parser_rejects_nonpositive_torque_limit():
    text = "link a mass=1 inertia=1,1,1\njoint j type=revolute parent=world child=a limit=0\n"
    with pytest.raises(ModelFileError) as err:
        parse_model(text)
    assert err.value.line == 2
