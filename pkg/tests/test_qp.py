import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import active_set_enumeration, random_feasible_qp
from legsafe.qp import (INFEASIBLE, OPTIMAL, UNBOUNDED, QpInputError, QpProblem, QpSettings,
                        WarmStart, dump_problem, kkt_residuals, load_problem, solve,
                        warm_start_from)


def test_single_active_bound():
    sol = solve(QpProblem([[1.0]], [0.0], G=[[-1.0]], h_ub=[-1.0]))
    assert sol.status == OPTIMAL
    assert sol.x_star == pytest.approx([1.0], abs=1e-9)
    assert sol.duals_ineq == pytest.approx([1.0], abs=1e-9)


def test_unconstrained_minimum():
    rng = np.random.default_rng(0)
    L = rng.normal(size=(5, 5))
    P = L @ L.T + np.eye(5)
    c = rng.normal(size=5)
    sol = solve(QpProblem(P, c))
    assert sol.status == OPTIMAL
    assert np.abs(sol.x_star + np.linalg.solve(P, c)).max() <= 1e-8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_matches_active_set_enumeration(seed):
    P, c, A, b, G, h = random_feasible_qp(np.random.default_rng(seed))
    x_ref, _ = active_set_enumeration(P, c, A, b, G, h)
    sol = solve(QpProblem(P, c, A, b, G, h))
    assert sol.status == OPTIMAL
    assert np.abs(sol.x_star - x_ref).max() <= 1e-5


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_optimal_solutions_satisfy_kkt(seed):
    P, c, A, b, G, h = random_feasible_qp(np.random.default_rng(seed))
    prob = QpProblem(P, c, A, b, G, h)
    s = QpSettings()
    sol = solve(prob, s)
    assert sol.status == OPTIMAL
    x, yeq, yin = sol.x_star, sol.duals_eq, sol.duals_ineq
    assert np.abs(A @ x - b).max(initial=0) <= s.tol_feas
    assert (G @ x - h).max(initial=0) <= s.tol_feas
    assert np.abs(P @ x + c + A.T @ yeq + G.T @ yin).max() <= s.tol_opt
    assert yin.min(initial=0) >= -s.tol_opt
    assert abs(yin @ (G @ x - h)) <= s.tol_opt
    primal, dual, comp = kkt_residuals(prob, x, yeq, yin)
    assert max(primal, dual, comp) <= 1e-6


def test_infeasible_is_a_status():
    sol = solve(QpProblem([[1.0]], [0.0], G=[[1.0], [-1.0]], h_ub=[-1.0, -1.0]))
    assert sol.status == INFEASIBLE


def test_infeasible_equalities():
    sol = solve(QpProblem(np.eye(2), [0, 0], A_eq=[[1, 1], [1, 1]], b_eq=[0, 1]))
    assert sol.status == INFEASIBLE


def test_unbounded_is_a_status():
    sol = solve(QpProblem([[0.0]], [1.0], G=[[1.0]], h_ub=[1.0]))
    assert sol.status == UNBOUNDED


def test_rejects_indefinite_P():
    with pytest.raises(QpInputError):
        solve(QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0]))


def test_rejects_asymmetric_P():
    with pytest.raises(QpInputError):
        QpProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


def test_rejects_inconsistent_dimensions():
    with pytest.raises(QpInputError):
        QpProblem(np.eye(2), [0.0, 0.0], G=[[1.0, 0.0]], h_ub=[1.0, 2.0])


def test_warm_start_dimension_must_match():
    prob = QpProblem(np.eye(2), [1.0, 1.0], G=[[1.0, 0.0]], h_ub=[0.0])
    bad = WarmStart(np.zeros(3), np.zeros(0), np.zeros(1))
    with pytest.raises(QpInputError):
        solve(prob, warm_start=bad)


def test_warm_start_from_solution_converges_immediately():
    P, c, A, b, G, h = random_feasible_qp(np.random.default_rng(1))
    prob = QpProblem(P, c, A, b, G, h)
    cold = solve(prob)
    warm = solve(prob, warm_start=warm_start_from(cold))
    assert warm.status == OPTIMAL
    assert warm.iterations <= cold.iterations
    assert np.abs(warm.x_star - cold.x_star).max() <= 1e-6


def test_bitwise_deterministic():
    P, c, A, b, G, h = random_feasible_qp(np.random.default_rng(2))
    s1 = solve(QpProblem(P, c, A, b, G, h))
    s2 = solve(QpProblem(P, c, A, b, G, h))
    assert s1.x_star.tobytes() == s2.x_star.tobytes()
    assert s1.duals_ineq.tobytes() == s2.duals_ineq.tobytes()
    assert s1.iterations == s2.iterations


def test_dump_and_load_round_trip(tmp_path):
    P, c, A, b, G, h = random_feasible_qp(np.random.default_rng(3))
    prob = QpProblem(P, c, A, b, G, h)
    dump_problem(prob, tmp_path / "qp.txt")
    back = load_problem(tmp_path / "qp.txt")
    for name in ("P", "c", "A_eq", "b_eq", "G", "h_ub"):
        assert np.array_equal(getattr(prob, name), getattr(back, name))
