"""Dense convex QP solver (operator splitting / ADMM with solution polishing).

Solves::

    minimize    1/2 x'Px + c'x
    subject to  A_eq x = b_eq
                G x <= h_ub

The iteration follows the usual OSQP scheme: Ruiz equilibration, a cached
Cholesky factor of ``P + sigma I + A' diag(rho) A``, over-relaxation, and
a final KKT solve on the detected active set ("polishing"), which brings
residuals down to round-off when the active set is guessed right.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, lu_factor, lu_solve

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITERATIONS = "max_iterations"


class QpInputError(ValueError):
    pass


@dataclass
class QpProblem:
    P: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    G: np.ndarray = None
    h_ub: np.ndarray = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, float))
        self.c = np.asarray(self.c, float).reshape(-1)
        n = self.c.size
        if self.P.shape != (n, n):
            raise QpInputError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if not np.allclose(self.P, self.P.T, atol=1e-9, rtol=0):
            raise QpInputError("P is not symmetric")
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        if self.G is None:
            self.G, self.h_ub = np.zeros((0, n)), np.zeros(0)
        self.A_eq = np.asarray(self.A_eq, float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, float).reshape(-1)
        self.G = np.asarray(self.G, float).reshape(-1, n)
        self.h_ub = np.asarray(self.h_ub, float).reshape(-1)
        if self.A_eq.shape[0] != self.b_eq.size:
            raise QpInputError("A_eq and b_eq disagree")
        if self.G.shape[0] != self.h_ub.size:
            raise QpInputError("G and h_ub disagree")

    @property
    def n(self):
        return self.c.size

    @property
    def m_eq(self):
        return self.b_eq.size

    @property
    def m_ineq(self):
        return self.h_ub.size


@dataclass
class QpSettings:
    tol_feas: float = 1e-6
    tol_opt: float = 1e-6
    max_iter: int = 4000
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iters: int = 10
    polish: bool = True
    polish_trigger: float = 1e-3
    check_every: int = 5
    eps_infeasible: float = 1e-5


@dataclass
class WarmStart:
    x: np.ndarray
    y_eq: np.ndarray
    y_ineq: np.ndarray


@dataclass
class QpSolution:
    x_star: np.ndarray
    duals_eq: np.ndarray
    duals_ineq: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    complementarity: float = np.nan
    polished: bool = False

    @property
    def optimal(self):
        return self.status == OPTIMAL


def warm_start_from(previous: QpSolution) -> WarmStart:
    """Primal and dual iterates of a previous solve, for the next control step."""
    return WarmStart(previous.x_star.copy(), previous.duals_eq.copy(), previous.duals_ineq.copy())


def kkt_residuals(problem: QpProblem, x, y_eq, y_ineq):
    """(primal, dual, complementarity) residuals, all in the infinity norm."""
    r_eq = problem.A_eq @ x - problem.b_eq
    slack = problem.G @ x - problem.h_ub
    primal = max(np.abs(r_eq).max(initial=0.0), slack.max(initial=0.0))
    grad = problem.P @ x + problem.c + problem.A_eq.T @ y_eq + problem.G.T @ y_ineq
    dual = max(np.abs(grad).max(initial=0.0), (-y_ineq).max(initial=0.0))
    comp = np.abs(y_ineq * slack).max(initial=0.0)
    return primal, dual, comp


def _ruiz(P, q, A, iters):
    n, m = P.shape[0], A.shape[0]
    D, E = np.ones(n), np.ones(m)
    P, q, A = P.copy(), q.copy(), A.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(P).max(axis=0), np.abs(A).max(axis=0, initial=0.0))
        d = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        d[col == 0] = 1.0
        if m:
            row = np.abs(A).max(axis=1)
            e = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            e[row == 0] = 1.0
        else:
            e = np.ones(0)
        P = d[:, None] * P * d[None, :]
        A = e[:, None] * A * d[None, :]
        q = d * q
        D *= d
        E *= e
    pnorm = np.abs(P).max(axis=0).mean() if n else 1.0
    cost = 1.0 / np.clip(max(pnorm, np.abs(q).max(initial=0.0)), 1e-4, 1e4)
    return P * cost, q * cost, A, D, E, cost


def _check_psd(P):
    try:
        cho_factor(P + 1e-10 * np.eye(P.shape[0]))
    except LinAlgError:
        raise QpInputError("P is not positive semidefinite") from None


def _kkt_solve(problem, active, delta=1e-9, refine=20):
    """Equality-constrained QP on the active set.

    The KKT matrix is regularized ([P + dI, A'; A, -dI]) so redundant active
    rows (degenerate vertices) stay solvable, then iterative refinement
    against the exact KKT matrix removes the regularization bias.
    """
    n, me = problem.n, problem.m_eq
    A = np.vstack([problem.A_eq, problem.G[active]])
    b = np.concatenate([problem.b_eq, problem.h_ub[active]])
    m = A.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = problem.P
    kkt[:n, n:] = A.T
    kkt[n:, :n] = A
    reg = kkt.copy()
    reg[:n, :n] += delta * np.eye(n)
    reg[n:, n:] -= delta * np.eye(m)
    rhs = np.concatenate([-problem.c, b])
    try:
        lu = lu_factor(reg)
    except (LinAlgError, ValueError):
        return None
    sol = lu_solve(lu, rhs)
    for _ in range(refine):
        r = rhs - kkt @ sol
        if np.abs(r).max(initial=0.0) <= 1e-13 * (1.0 + np.abs(rhs).max(initial=0.0)):
            break
        sol = sol + lu_solve(lu, r)
    if not np.all(np.isfinite(sol)):
        return None
    y_ineq = np.zeros(problem.m_ineq)
    y_ineq[active] = sol[n + me:]
    return sol[:n], sol[n:n + me], y_ineq


def _polish(problem, active, tol, max_swaps=10):
    """Solve the equality-constrained QP on the guessed active set, then repair
    the guess with a few primal-dual active-set swaps."""
    active = sorted(int(i) for i in active)
    for _ in range(max_swaps + 1):
        sol = _kkt_solve(problem, active)
        if sol is None:
            return None
        x, y_eq, y_ineq = sol
        if active and y_ineq[active].min() < -tol:
            active.remove(active[int(np.argmin(y_ineq[active]))])
            continue
        viol = problem.G @ x - problem.h_ub
        if viol.size and viol.max() > tol:
            active = sorted(active + [int(np.argmax(viol))])
            continue
        return sol
    return None


def solve(problem: QpProblem, settings: QpSettings | None = None,
          warm_start: WarmStart | None = None) -> QpSolution:
    s = settings or QpSettings()
    _check_psd(problem.P)
    n, me, mi = problem.n, problem.m_eq, problem.m_ineq
    m = me + mi
    A = np.vstack([problem.A_eq, problem.G])
    lower = np.concatenate([problem.b_eq, np.full(mi, -np.inf)])
    upper = np.concatenate([problem.b_eq, problem.h_ub])

    Ps, qs, As, D, E, cost = _ruiz(problem.P, problem.c, A, s.scaling_iters)
    ls, us = E * lower, E * upper
    rho = np.full(m, s.rho)
    rho[:me] *= s.rho_eq_scale
    K = Ps + s.sigma * np.eye(n) + As.T @ (rho[:, None] * As)
    factor = cho_factor(K)

    if warm_start is not None:
        if warm_start.x.shape != (n,) or warm_start.y_eq.shape != (me,) \
                or warm_start.y_ineq.shape != (mi,):
            raise QpInputError("warm start dimensions do not match the problem")
        x = warm_start.x / D
        y = np.concatenate([warm_start.y_eq, warm_start.y_ineq]) * cost / E
        z = np.clip(As @ x, ls, us)
    else:
        x, y, z = np.zeros(n), np.zeros(m), np.zeros(m)
        z = np.clip(z, ls, us)

    def unscale(x, y):
        yu = E * y / cost
        return D * x, yu[:me], yu[me:]

    def finish(status, it, xu, yeq, yin, polished=False):
        pr, du, co = kkt_residuals(problem, xu, yeq, yin)
        return QpSolution(xu, yeq, yin, status, it, pr, du, co, polished)

    next_polish = s.polish_trigger
    guess, guess_since, tried = None, 0, set()
    it = 0
    for it in range(1, s.max_iter + 1):
        x_prev, y_prev = x, y
        rhs = s.sigma * x - qs + As.T @ (rho * z - y)
        xt = cho_solve(factor, rhs)
        zt = As @ xt
        x = s.alpha * xt + (1 - s.alpha) * x
        zh = s.alpha * zt + (1 - s.alpha) * z
        z = np.clip(zh + y / rho, ls, us)
        y = y + rho * (zh - z)

        if it % s.check_every:
            continue
        xu, yeq, yin = unscale(x, y)
        pr, du, co = kkt_residuals(problem, xu, yeq, yin)
        if s.polish:
            active = tuple(np.nonzero(us[me:] - z[me:] < y[me:])[0])
            if active != guess:
                guess, guess_since = active, it
            # polish on small residuals, or once a guess has been stable for a while
            small = max(pr, du, co) <= next_polish
            stable = it - guess_since >= 50 and guess not in tried
            if small or stable:
                tried.add(guess)
                pol = _polish(problem, guess, s.tol_feas)
                if pol is not None:
                    ppr, pdu, pco = kkt_residuals(problem, *pol)
                    if ppr <= s.tol_feas and pdu <= s.tol_opt and pco <= s.tol_opt:
                        return finish(OPTIMAL, it, *pol, polished=True)
                if small:
                    next_polish = max(pr, du, co) / 10.0
        if pr <= s.tol_feas and du <= s.tol_opt and co <= s.tol_opt:
            return finish(OPTIMAL, it, xu, yeq, yin)

        # infeasibility certificates, evaluated on unscaled increments
        dy = E * (y - y_prev) / cost
        ndy = np.abs(dy).max(initial=0.0)
        if ndy > 1e-10:
            eps = s.eps_infeasible * ndy
            pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
            if np.all(neg[me:] >= -eps) and np.abs(A.T @ dy).max(initial=0.0) <= eps:
                support = upper @ pos + (lower[:me] @ neg[:me])
                if support < -eps:
                    return finish(INFEASIBLE, it, xu, yeq, yin)
        dx = D * (x - x_prev)
        ndx = np.abs(dx).max(initial=0.0)
        if ndx > 1e-10:
            eps = s.eps_infeasible * ndx
            if (np.abs(problem.P @ dx).max() <= eps and problem.c @ dx < -eps
                    and np.abs(problem.A_eq @ dx).max(initial=0.0) <= eps
                    and (problem.G @ dx).max(initial=-1.0) <= eps):
                return finish(UNBOUNDED, it, xu, yeq, yin)

    xu, yeq, yin = unscale(x, y)
    return finish(MAX_ITERATIONS, it, xu, yeq, yin)


def dump_problem(problem: QpProblem, path):
    """Write a QP as labelled plain-text matrices (debugging aid)."""
    with open(path, "w") as fh:
        for name in ("P", "c", "A_eq", "b_eq", "G", "h_ub"):
            arr = np.atleast_2d(getattr(problem, name))
            if name in ("c", "b_eq", "h_ub"):
                arr = arr.reshape(1, -1)
            fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_problem(path) -> QpProblem:
    blocks = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        _, name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        blocks[name] = np.array(data, dtype=float).reshape(rows, cols)
        i += 1 + rows
    return QpProblem(blocks["P"], blocks["c"].ravel(), blocks["A_eq"], blocks["b_eq"].ravel(),
                     blocks["G"], blocks["h_ub"].ravel())
