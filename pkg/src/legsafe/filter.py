"""Inverse-dynamics safety filter.

Decision vector ``X = (vdot, u, lambda)``. The QP stays as close as possible
to the nominal torque while respecting the equations of motion, stationary
stance feet, a pyramidal friction cone, torque limits and, for every swing
foot, an exponential barrier on its height above a clearance profile.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qp
from .model import (ContactSet, Kinematics, RobotModel, RobotState, contact_jacobian,
                    jacobian_dot_v)

TROT_SWING_WINDOWS = ((0.5, 0.5), (0.0, 0.5), (0.0, 0.5), (0.5, 0.5))


class FilterContractError(ValueError):
    """Raised when an operation is used outside its contract (e.g. a stance foot's ECBF row)."""


@dataclass(frozen=True)
class PhaseState:
    phi: float
    phi_dot: float
    phi_ddot: float = 0.0


def phase(t, gait_period) -> PhaseState:
    if not gait_period > 0:
        raise ValueError("gait_period must be > 0")
    return PhaseState((t % gait_period) / gait_period, 1.0 / gait_period, 0.0)


@dataclass(frozen=True)
class PolynomialProfile:
    """z(s) = sum_k coeffs[k] s^k on the local swing phase s in [0, 1]."""
    coeffs: tuple = (0.0,)

    def value(self, s):
        return float(np.polynomial.polynomial.polyval(s, self.coeffs))

    def d1(self, s):
        return float(np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.coeffs)))

    def d2(self, s):
        return float(np.polynomial.polynomial.polyval(s, np.polynomial.polynomial.polyder(self.coeffs, 2)))

    @property
    def degree(self):
        return len(self.coeffs) - 1


def flat_profile(height=0.0):
    return PolynomialProfile((float(height),))


def bump_profile(height, base=-0.04):
    """Fourth-order bump: ``base`` at both ends, ``height`` at mid-swing, zero slope at the ends.

    z(s) = base + 16 (height - base) s^2 (1 - s)^2
    """
    a = 16.0 * (height - base)
    return PolynomialProfile((base, 0.0, a, -2 * a, a))


@dataclass
class FilterConfig:
    mu: float = 0.8
    alpha1: float = 20.0
    alpha2: float = 20.0
    gait_period: float = 0.6
    obstacle_profile: object = None     # profile, or one per foot (None entries = no barrier)
    swing_windows: tuple = TROT_SWING_WINDOWS
    cbf_enabled: bool = True
    friction_enabled: bool = True
    torque_limits_enabled: bool = True
    lambda_z_min: float = 1.0
    terrain_height: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ValueError("alpha1 and alpha2 must be > 0")
        if not self.gait_period > 0:
            raise ValueError("gait_period must be > 0")
        if self.lambda_z_min < 0:
            raise ValueError("lambda_z_min must be >= 0")
        for prof in self._profiles():
            if prof is None:
                continue
            for s in np.linspace(0, 1, 11):
                with np.errstate(invalid="ignore", over="ignore"):
                    vals = (prof.value(s), prof.d1(s), prof.d2(s))
                if not np.all(np.isfinite(vals)):
                    raise ValueError("obstacle profile must be finite with finite derivatives on [0, 1]")

    def _profiles(self):
        p = self.obstacle_profile
        if isinstance(p, (list, tuple)):
            return list(p)
        return [p] * len(self.swing_windows)

    def profile_for(self, foot):
        return self._profiles()[foot]

    @property
    def mu_tilde(self):
        return self.mu / np.sqrt(2.0)


def swing_phase(phi, window):
    """Local swing phase ``s`` in [0, 1) for a (start, length) window, or None outside it."""
    start, length = window
    d = (phi - start) % 1.0
    if d < length:
        return d / length
    return None


def _profile_terms(config, foot, phi):
    """z, dz/dt and d2z/dt2 of the clearance height seen by ``foot`` at phase ``phi``.

    Outside the foot's swing window (or without a profile) the clearance
    height is the terrain height and all derivatives vanish.
    """
    prof = config.profile_for(foot)
    s = swing_phase(phi, config.swing_windows[foot])
    if prof is None or s is None:
        return config.terrain_height, 0.0, 0.0
    s_dot = 1.0 / (config.gait_period * config.swing_windows[foot][1])
    return prof.value(s), prof.d1(s) * s_dot, prof.d2(s) * s_dot ** 2


def barrier_value(model, state, foot, config: FilterConfig, phi, kin=None):
    """h = foot height (world) - clearance height z(phi)."""
    kin = kin or Kinematics(model, state)
    z, _, _ = _profile_terms(config, foot, phi)
    return kin.feet()[0][foot][2] - z


def barrier_terms(model, state, foot, config: FilterConfig, phi, kin=None):
    """(h, hdot, h_e) with h_e = hdot + alpha1 h."""
    kin = kin or Kinematics(model, state)
    P, V, _, _ = kin.feet()
    z, zd, _ = _profile_terms(config, foot, phi)
    h = P[foot][2] - z
    hd = V[foot][2] - zd
    return h, hd, hd + config.alpha1 * h


def ecbf_row(model, state, foot, config: FilterConfig, phi, contacts: ContactSet | None = None,
             kin=None):
    """(row over X, bound) encoding  hddot + alpha1 hdot + alpha2 h_e >= 0.

    With hddot = J_z vdot + (Jdot v)_z - z'', this is
    -J_z vdot <= (Jdot v)_z - z'' + alpha1 hdot + alpha2 h_e.
    """
    if contacts is not None and foot in contacts:
        raise FilterContractError(f"foot {foot} is in stance; barrier rows apply to swing feet only")
    kin = kin or Kinematics(model, state)
    P, V, J, A = kin.feet()
    z, zd, zdd = _profile_terms(config, foot, phi)
    h = P[foot][2] - z
    hd = V[foot][2] - zd
    he = hd + config.alpha1 * h
    n_c = contacts.n_c if contacts is not None else 0
    row = np.zeros(model.nv + model.nva + 3 * n_c)
    row[:model.nv] = -J[foot][2]
    rhs = A[foot][2] - zdd + config.alpha1 * hd + config.alpha2 * he
    return row, rhs


def friction_rows(contacts: ContactSet, mu, n_x=None, offset=0, lambda_z_min=1.0):
    """Five rows per stance foot over its force block starting at ``offset``:
    -lz <= -lambda_z_min, +-lx <= mu~ lz, +-ly <= mu~ lz with mu~ = mu / sqrt(2)."""
    m = mu / np.sqrt(2.0)
    n_x = offset + 3 * contacts.n_c if n_x is None else n_x
    G = np.zeros((5 * contacts.n_c, n_x))
    h = np.zeros(5 * contacts.n_c)
    for k in range(contacts.n_c):
        x, y, z = offset + 3 * k, offset + 3 * k + 1, offset + 3 * k + 2
        r = 5 * k
        G[r, z] = -1.0
        h[r] = -lambda_z_min
        G[r + 1, x], G[r + 1, z] = 1.0, -m
        G[r + 2, x], G[r + 2, z] = -1.0, -m
        G[r + 3, y], G[r + 3, z] = 1.0, -m
        G[r + 4, y], G[r + 4, z] = -1.0, -m
    return G, h


@dataclass
class Layout:
    nv: int
    nva: int
    n_c: int
    friction: slice = slice(0, 0)
    lower_bound_rows: tuple = ()
    ecbf: dict = field(default_factory=dict)      # foot -> inequality row
    torque: slice = slice(0, 0)

    @property
    def vdot(self):
        return slice(0, self.nv)

    @property
    def u(self):
        return slice(self.nv, self.nv + self.nva)

    @property
    def lam(self):
        return slice(self.nv + self.nva, self.nv + self.nva + 3 * self.n_c)


def assemble_with_layout(model: RobotModel, state: RobotState, contacts: ContactSet, u_nominal,
                         config: FilterConfig, phi=None, kin=None, flight=None):
    """Build the filter QP and report where each constraint block lives.

    Barrier rows are added for feet inside their swing window that are in
    ``flight`` (default: every foot not in ``contacts``).
    """
    kin = kin or Kinematics(model, state)
    phi = phase(state.t, config.gait_period).phi if phi is None else phi
    nv, nva, nc = model.nv, model.nva, contacts.n_c
    n = nv + nva + 3 * nc
    lay = Layout(nv, nva, nc)

    P = np.zeros((n, n))
    P[lay.u, lay.u] = np.eye(nva)
    c = np.zeros(n)
    c[lay.u] = -np.asarray(u_nominal, float)

    M = kin.mass_matrix()
    H = kin.rnea(np.zeros(nv))
    Jc = contact_jacobian(model, state, contacts, kin)
    A = np.zeros((nv + 3 * nc, n))
    A[:nv, lay.vdot] = M
    A[:nv, lay.u] = -model.B
    A[:nv, lay.lam] = -Jc.T
    A[nv:, lay.vdot] = Jc
    b = np.concatenate([-H, -jacobian_dot_v(model, state, contacts, kin)])

    rows, rhs = [], []
    if config.friction_enabled:
        Gf, hf = friction_rows(contacts, config.mu, n, lay.lam.start, config.lambda_z_min)
    else:
        # unilateral contact only
        Gf = np.zeros((nc, n))
        hf = np.full(nc, -config.lambda_z_min)
        for k in range(nc):
            Gf[k, lay.lam.start + 3 * k + 2] = -1.0
    rows.append(Gf)
    rhs.append(hf)
    lay.friction = slice(0, len(hf))
    r = len(hf)
    if config.cbf_enabled:
        for foot in range(model.n_feet):
            if foot in contacts or config.profile_for(foot) is None:
                continue
            if flight is not None and foot not in flight:
                continue
            if swing_phase(phi, config.swing_windows[foot]) is None:
                continue
            row, bound = ecbf_row(model, state, foot, config, phi, contacts, kin)
            rows.append(row[None, :])
            rhs.append([bound])
            lay.ecbf[foot] = r
            r += 1
    if config.torque_limits_enabled:
        Gt = np.zeros((2 * nva, n))
        Gt[:nva, lay.u] = np.eye(nva)
        Gt[nva:, lay.u] = -np.eye(nva)
        rows.append(Gt)
        rhs.append(np.concatenate([model.torque_limits, model.torque_limits]))
        lay.torque = slice(r, r + 2 * nva)
    G = np.vstack(rows) if rows else np.zeros((0, n))
    h = np.concatenate([np.asarray(x, float) for x in rhs]) if rhs else np.zeros(0)
    return qp.QpProblem(P, c, A, b, G, h), lay


def assemble(model, state, contacts, u_nominal, config, phi=None, kin=None,
             flight=None) -> qp.QpProblem:
    return assemble_with_layout(model, state, contacts, u_nominal, config, phi, kin, flight)[0]


@dataclass
class FilterDecision:
    u_filtered: np.ndarray
    v_dot: np.ndarray
    lam: np.ndarray
    status: str
    h_values: dict
    interference: float
    iterations: int = 0
    fallback: bool = False
    solution: object = None
    slack: dict = field(default_factory=dict)   # foot -> ECBF row slack at the solution
    kkt: tuple = (np.nan, np.nan, np.nan)


def filter_step(model: RobotModel, state: RobotState, contacts: ContactSet, u_nominal,
                config: FilterConfig, warm_start=None, fallback_u=None, settings=None,
                phi=None, kin=None, flight=None) -> FilterDecision:
    """Solve the filter QP. If it is not solved to optimality the decision
    holds ``fallback_u`` (the last certified torque; ``u_nominal`` clipped to
    the limits when there is none) and is flagged."""
    kin = kin or Kinematics(model, state)
    phi = phase(state.t, config.gait_period).phi if phi is None else phi
    u_nominal = np.asarray(u_nominal, float)
    problem, lay = assemble_with_layout(model, state, contacts, u_nominal, config, phi, kin,
                                        flight)
    if warm_start is not None and (len(warm_start.x) != problem.n
                                   or len(warm_start.y_eq) != problem.m_eq
                                   or len(warm_start.y_ineq) != problem.m_ineq):
        # the active contact or barrier set changed since the previous step
        warm_start = None
    sol = qp.solve(problem, settings, warm_start)
    h_values = {}
    for foot in range(model.n_feet):
        if foot not in contacts:
            h_values[foot] = barrier_value(model, state, foot, config, phi, kin)
    if sol.status == qp.OPTIMAL:
        x = sol.x_star
        u = x[lay.u].copy()
        resid = problem.h_ub - problem.G @ x
        slack = {f: (resid[r], problem.h_ub[r]) for f, r in lay.ecbf.items()}
        return FilterDecision(u, x[lay.vdot].copy(), x[lay.lam].copy(), sol.status, h_values,
                              float(np.linalg.norm(u - u_nominal)), sol.iterations, False, sol,
                              slack, qp.kkt_residuals(problem, x, sol.duals_eq, sol.duals_ineq))
    if fallback_u is None:
        fallback_u = np.clip(u_nominal, -model.torque_limits, model.torque_limits)
    u = np.asarray(fallback_u, float).copy()
    return FilterDecision(u, np.full(model.nv, np.nan), np.full(3 * contacts.n_c, np.nan),
                          sol.status, h_values, float(np.linalg.norm(u - u_nominal)),
                          sol.iterations, True, sol)


def implied_contact_forces(model, state, contacts, u, kin=None):
    """(vdot, lambda) produced by torque ``u`` under rigid stationary contacts."""
    kin = kin or Kinematics(model, state)
    nv, nc = model.nv, contacts.n_c
    M = kin.mass_matrix()
    H = kin.rnea(np.zeros(nv))
    Jc = contact_jacobian(model, state, contacts, kin)
    K = np.zeros((nv + 3 * nc, nv + 3 * nc))
    K[:nv, :nv] = M
    K[:nv, nv:] = -Jc.T
    K[nv:, :nv] = Jc
    rhs = np.concatenate([model.B @ np.asarray(u, float) - H,
                          -jacobian_dot_v(model, state, contacts, kin)])
    sol = np.linalg.solve(K, rhs)
    return sol[:nv], sol[nv:]


class MuSmoother:
    """First-order smoothing of a friction estimate before it reaches the filter."""

    def __init__(self, mu0, time_constant=0.5):
        self.mu = float(mu0)
        self.time_constant = time_constant

    def update(self, mu_measured, dt):
        if self.time_constant <= 0:
            self.mu = float(mu_measured)
        else:
            a = 1.0 - np.exp(-dt / self.time_constant)
            self.mu += a * (float(mu_measured) - self.mu)
        return self.mu


class SafetyFilter:
    """Stateful wrapper for a control loop: warm starts and the fallback torque."""

    def __init__(self, model: RobotModel, config: FilterConfig, settings=None):
        self.model = model
        self.config = config
        self.settings = settings
        self._warm = None
        self._last_u = None

    def reset(self):
        self._warm = None
        self._last_u = None

    def step(self, state, contacts, u_nominal, kin=None, flight=None) -> FilterDecision:
        warm = self._warm
        dec = filter_step(self.model, state, contacts, u_nominal, self.config, warm,
                          self._last_u, self.settings, kin=kin, flight=flight)
        if not dec.fallback:
            self._last_u = dec.u_filtered.copy()
            self._warm = qp.warm_start_from(dec.solution)
        else:
            self._warm = None
        return dec
