import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legsafe.model import Kinematics
from legsafe.gait import TrotController, nominal_torque
from legsafe.robots import STAND_POSE, standing_state
from legsafe.scenario import (SCHEMA_VERSION, ScenarioLog, check_log_schema, log_columns,
                              measure_grf_error, read_log, run_scenario, stance_mask)
from legsafe.sim import SimConfig, Terrain, contact_forces, contact_law, step

K, B, VEPS = 3e4, 1e3, 1e-4


def test_no_force_above_ground():
    f, jac = contact_law(-0.01, np.array([0.3, 0.0, -0.5]), 0.8, K, B, VEPS)
    assert np.all(f == 0) and np.all(jac == 0)


def test_static_penetration_is_a_spring():
    f, _ = contact_law(0.002, np.zeros(3), 0.8, K, B, VEPS)
    assert f == pytest.approx([0.0, 0.0, K * 0.002], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 5e-3), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 1.5))
def test_sliding_friction_magnitude(delta, wx, wy, mu):
    if np.hypot(wx, wy) <= 2 * VEPS:
        wx = 0.01
    f, _ = contact_law(delta, np.array([wx, wy, 0.0]), mu, K, B, VEPS)
    assert np.hypot(f[0], f[1]) == pytest.approx(mu * f[2], abs=1e-9)
    # opposes the slip
    assert f[0] * wx + f[1] * wy < 0


def test_stiction_regularization_is_linear():
    f1, _ = contact_law(0.002, np.array([VEPS / 4, 0, 0]), 0.8, K, B, VEPS)
    f2, _ = contact_law(0.002, np.array([VEPS / 2, 0, 0]), 0.8, K, B, VEPS)
    assert f2[0] == pytest.approx(2 * f1[0])
    assert abs(f2[0]) < 0.8 * f2[2]


def test_normal_force_never_pulls():
    f, _ = contact_law(0.001, np.array([0.0, 0.0, 5.0]), 0.8, K, B, VEPS)
    assert f[2] == 0.0


def test_contact_law_jacobian_matches_finite_differences():
    w = np.array([0.3, -0.2, -0.01])
    _, jac = contact_law(0.002, w, 0.7, K, B, VEPS)
    fd = np.zeros((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-7
        fd[:, i] = (contact_law(0.002, w + e, 0.7, K, B, VEPS)[0]
                    - contact_law(0.002, w - e, 0.7, K, B, VEPS)[0]) / 2e-7
    assert np.abs(fd - jac).max() <= 1e-4 * np.abs(jac).max()


def test_terrain_invariants():
    with pytest.raises(ValueError):
        Terrain(mu_true=0.0)
    with pytest.raises(ValueError):
        Terrain(profile="stairs")
    t = Terrain(profile="waves", params=dict(amplitude=0.05, wavelength=1.0))
    for x, y in np.random.default_rng(0).uniform(-3, 3, (20, 2)):
        n = t.normal(x, y)
        assert np.linalg.norm(n) == pytest.approx(1.0)
        F = t.frame(x, y)
        assert np.allclose(F.T @ F, np.eye(3), atol=1e-12)
    s = Terrain(profile="slope", params=dict(grade_x=0.1))
    assert s.height(2.0, 5.0) == pytest.approx(0.2)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(stiffness=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt_sim=0.0)


def test_dt_sim_must_not_exceed_control_dt(robot):
    with pytest.raises(ValueError):
        run_scenario(robot, TrotController(robot), Terrain(), 0.01,
                     sim_config=SimConfig(dt_sim=0.004))


def test_foot_forces_are_zero_in_the_air(robot):
    state = standing_state(robot, height=1.0)
    assert np.all(contact_forces(robot, state, Terrain()) == 0)


def _pd(robot, state):
    qs = np.tile(STAND_POSE, 4)
    return nominal_torque(state.q[7:], state.v[6:], qs, np.zeros(12), 60.0, 2.0,
                          robot.torque_limits)


def _run_pd(robot, state, duration, dt):
    cfg = SimConfig(dt_sim=dt)
    guess, info = None, None
    for _ in range(int(round(duration / dt))):
        state, info = step(robot, state, _pd(robot, state), Terrain(), cfg, info=True,
                           guess=guess)
        guess = info.forces
    return state, info


def test_static_stand_carries_the_weight(robot):
    state, info = _run_pd(robot, standing_state(robot), 1.0, 1e-3)
    weight = robot.total_mass * 9.81
    assert info.forces[:, 2].sum() == pytest.approx(weight, rel=0.01)
    assert np.abs(state.v).max() < 0.1


def test_refinement_convergence(robot):
    settled, _ = _run_pd(robot, standing_state(robot), 0.5, 1e-3)
    a, _ = _run_pd(robot, settled, 1.0, 1e-3)
    b, _ = _run_pd(robot, settled, 1.0, 5e-4)
    assert np.linalg.norm(np.concatenate([a.q - b.q, a.v - b.v])) < 1e-3


def test_implicit_step_forces_follow_the_law_at_the_new_velocity(robot):
    state, _ = _run_pd(robot, standing_state(robot), 0.2, 1e-3)
    cfg = SimConfig()
    new, info = step(robot, state, _pd(robot, state), Terrain(), cfg, info=True)
    P0, _, J0, _ = Kinematics(robot, state).feet()
    for f in range(4):
        w = J0[f] @ new.v
        expect, _ = contact_law(-P0[f][2] - cfg.dt_sim * w[2], w, 0.8, K, B, VEPS)
        assert info.forces[f] == pytest.approx(expect, abs=1e-6)


def test_run_is_deterministic(robot):
    logs = [run_scenario(robot, TrotController(robot), Terrain(), 0.3).to_csv() for _ in range(2)]
    assert logs[0] == logs[1]


def test_log_schema_round_trip(robot, tmp_path):
    log = run_scenario(robot, TrotController(robot), Terrain(), 0.1)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    assert check_log_schema(path) == []
    first = path.read_text().splitlines()[0]
    assert first.split(",")[:3] == ["schema", "t", "phi"]
    back = read_log(path)
    assert back.columns == log.columns
    assert np.array_equal(back.column("q_3"), log.column("q_3"))


def test_schema_check_reports_problems(robot, tmp_path):
    log = run_scenario(robot, TrotController(robot), Terrain(), 0.02)
    text = log.to_csv().splitlines()
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(text[:3] + [text[3].replace(SCHEMA_VERSION, "legsafe-log/0")]
                             + [text[4].rsplit(",", 1)[0]]) + "\n")
    problems = check_log_schema(bad)
    assert len(problems) == 2
    assert problems[0].startswith("line 4") and problems[1].startswith("line 5")
    hdr = tmp_path / "hdr.csv"
    hdr.write_text(text[0].replace("base_x", "bx") + "\n")
    assert check_log_schema(hdr)


def _synthetic_log(stance, lz, fz):
    cols = log_columns(1, 0, ("A",))
    rows = []
    for i, (st_, l, f) in enumerate(zip(stance, lz, fz)):
        row = dict.fromkeys(cols, 0.0)
        row.update(schema=SCHEMA_VERSION, t=i * 0.002, status="optimal", A_stance=float(st_),
                   A_lz=l, A_fz=f, filter_active=1.0)
        rows.append([row[c] for c in cols])
    return ScenarioLog(cols, rows)


def test_stance_mask_blanks_after_touchdown():
    stance = [0] * 5 + [1] * 30
    log = _synthetic_log(stance, [0] * 35, [0] * 5 + [100] * 30)
    keep = stance_mask(log, "A", blanking=0.02)
    # 20 ms at 2 ms steps: ten samples blanked after the stance start
    assert not keep[5:15].any() and keep[15:].all() and not keep[:5].any()


def test_grf_error_on_synthetic_log():
    stance = [1] * 40
    log = _synthetic_log(stance, [10.0] * 40, [12.0] * 40)
    mz, mt = measure_grf_error(log, blanking=0.0)
    assert mz == pytest.approx(2.0) and mt == 0.0
