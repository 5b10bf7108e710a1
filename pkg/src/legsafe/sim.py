"""Compliant-contact ground truth: terrain, contact law and time stepping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels as _k
from .spatial import cross3
from .model import GRAVITY, Kinematics, RobotModel, RobotState, integrate_configuration


@dataclass
class Terrain:
    """Ground with true friction ``mu_true`` and a smooth height field.

    ``profile`` is ``"flat"``, ``"slope"`` (params: grade_x, grade_y) or
    ``"waves"`` (params: amplitude, wavelength).
    """
    mu_true: float = 0.8
    profile: str = "flat"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.mu_true > 0:
            raise ValueError("mu_true must be > 0")
        if self.profile not in ("flat", "slope", "waves"):
            raise ValueError(f"unknown terrain profile {self.profile!r}")

    def height(self, x, y):
        p = self.params
        if self.profile == "flat":
            return 0.0 * x
        if self.profile == "slope":
            return p.get("grade_x", 0.0) * x + p.get("grade_y", 0.0) * y
        k = 2 * np.pi / p.get("wavelength", 1.0)
        return p.get("amplitude", 0.0) * np.sin(k * x) * np.sin(k * y)

    def gradient(self, x, y):
        p = self.params
        if self.profile == "flat":
            return np.zeros(2)
        if self.profile == "slope":
            return np.array([p.get("grade_x", 0.0), p.get("grade_y", 0.0)])
        k = 2 * np.pi / p.get("wavelength", 1.0)
        a = p.get("amplitude", 0.0)
        return a * k * np.array([np.cos(k * x) * np.sin(k * y), np.sin(k * x) * np.cos(k * y)])

    def normal(self, x, y):
        gx, gy = self.gradient(x, y)
        n = np.array([-gx, -gy, 1.0])
        return n / np.linalg.norm(n)

    def frame(self, x, y):
        """Columns (t1, t2, n); identity on flat ground."""
        if self.profile == "flat":
            return np.eye(3)
        n = self.normal(x, y)
        t1 = np.array([1.0, 0.0, 0.0]) - n[0] * n
        t1 /= np.linalg.norm(t1)
        return np.column_stack([t1, cross3(n, t1), n])


@dataclass
class SimConfig:
    dt_sim: float = 1e-3
    stiffness: float = 3e4
    damping: float = 1e3
    v_eps: float = 1e-4
    duration: float = 5.0
    seed: int = 0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    newton_tol: float = 1e-10
    newton_iters: int = 50

    def __post_init__(self):
        if not (self.stiffness > 0 and self.damping > 0):
            raise ValueError("stiffness and damping must be > 0")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be > 0")


def _penetration(terrain, p):
    n = terrain.normal(p[0], p[1])
    return (terrain.height(p[0], p[1]) - p[2]) * n[2]


def contact_law(delta, w, mu, k, b, v_eps):
    """Force (local t1, t2, n) and its Jacobian w.r.t. the local velocity ``w``.

    Normal: spring-damper on penetration ``delta``, never pulling. Tangential:
    Coulomb with magnitude ``mu * f_n`` when sliding faster than ``v_eps``,
    linear in slip velocity below it.
    """
    return _k.contact_law(float(delta), float(w[0]), float(w[1]), float(w[2]),
                          mu, k, b, v_eps, 0.0)


def contact_forces(model: RobotModel, state: RobotState, terrain: Terrain,
                   config: SimConfig | None = None, kin=None):
    """World-frame force on every foot from the current penetration and velocity."""
    config = config or SimConfig()
    kin = kin or Kinematics(model, state)
    P, V, _, _ = kin.feet()
    out = np.zeros((model.n_feet, 3))
    for i in range(model.n_feet):
        R = terrain.frame(P[i, 0], P[i, 1])
        f, _ = contact_law(_penetration(terrain, P[i]), R.T @ V[i], terrain.mu_true,
                           config.stiffness, config.damping, config.v_eps)
        out[i] = R @ f
    return out


@dataclass
class StepInfo:
    forces: np.ndarray          # world-frame force per foot over the step
    newton_iterations: int
    residual: float


def step(model: RobotModel, state: RobotState, u, terrain: Terrain,
         config: SimConfig | None = None, info=False, guess=None):
    """Advance one ``dt_sim``.

    The contact law is evaluated at the end-of-step velocity and the
    predicted penetration (velocity-implicit), solved by Newton iteration in
    contact space; the configuration then follows semi-implicit Euler.
    """
    config = config or SimConfig()
    dt = config.dt_sim
    kin = Kinematics(model, state)
    M = kin.mass_matrix()
    H = kin.rnea(np.zeros(model.nv), config.gravity)
    chol = cho_factor(M)
    tau = model.B @ np.asarray(u, float) if model.nva else np.zeros(model.nv)
    v_free = state.v + dt * cho_solve(chol, tau - H)

    P, _, J, _ = kin.feet()
    cand, frames, deltas = [], [], []
    for i in range(model.n_feet):
        d = _penetration(terrain, P[i])
        if d > -0.02:
            cand.append(i)
            frames.append(terrain.frame(P[i, 0], P[i, 1]))
            deltas.append(d)
    forces = np.zeros((model.n_feet, 3))
    iters, res = 0, 0.0
    if cand:
        Jl = np.vstack([R.T @ J[i] for i, R in zip(cand, frames)])
        MinvJt = cho_solve(chol, Jl.T)
        W = Jl @ MinvJt
        w_free = Jl @ v_free
        f0 = np.zeros(3 * len(cand))
        if guess is not None:
            for c, (i, R) in enumerate(zip(cand, frames)):
                f0[3 * c:3 * c + 3] = R.T @ guess[i]
        scale = 1.0 + np.abs(w_free).max()
        w, f, iters, res = _k.solve_contacts(
            W, w_free, np.array(deltas), w_free + dt * W @ f0, terrain.mu_true,
            config.stiffness, config.damping, config.v_eps, dt,
            config.newton_tol * scale, config.newton_iters)
        v_new = v_free + dt * MinvJt @ f
        for c, (i, R) in enumerate(zip(cand, frames)):
            forces[i] = R @ f[3 * c:3 * c + 3]
    else:
        v_new = v_free
    new = RobotState(integrate_configuration(model, state.q, v_new * dt), v_new, state.t + dt)
    if info:
        return new, StepInfo(forces, iters, res)
    return new
