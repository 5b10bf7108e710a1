"""Kinematic-tree rigid-body dynamics for floating-base robots.

Conventions
-----------
* Configuration ``q``: joint coordinates in topological joint order. A
  floating base contributes 7 entries (position, unit quaternion w-x-y-z),
  revolute/prismatic joints one each.
* Velocity ``v``: a floating base contributes its body-frame twist as
  (linear, angular); other joints one rate each. ``len(q) == n_v + 1``
  for a floating-base model.
* Internally every spatial quantity is a 6-vector ``[angular; linear]``
  expressed in world coordinates at the world origin.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels as _k
from .spatial import quat_exp, quat_multiply, quat_to_rot

GRAVITY = np.array([0.0, 0.0, -9.81])

JOINT_TYPES = ("floating", "revolute", "prismatic")


class ModelError(ValueError):
    """Raised when a model or a state is malformed or incompatible."""


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    inertia: np.ndarray          # 3x3 about the COM, link frame
    com: np.ndarray              # COM offset in the link frame


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    parent: str                  # parent link name or "world"
    child: str
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    actuated: bool = True
    torque_limit: float = np.inf


@dataclass(frozen=True)
class Foot:
    name: str
    link: str
    point: np.ndarray


def validate_link(link: Link):
    if not link.mass > 0:
        raise ModelError(f"link {link.name!r}: mass must be > 0")
    inertia = np.asarray(link.inertia, float)
    if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
        raise ModelError(f"link {link.name!r}: inertia must be symmetric 3x3")
    if np.linalg.eigvalsh(inertia).min() <= 0:
        raise ModelError(f"link {link.name!r}: inertia must be positive definite")


class RobotModel:
    """Immutable kinematic tree.

    Joints are reordered topologically (parents first, ties in declaration
    order). Each link is the child of exactly one joint.
    """

    def __init__(self, links, joints, feet=(), name="robot"):
        self.name = name
        self.links = {l.name: l for l in links}
        if len(self.links) != len(links):
            raise ModelError("duplicate link names")
        self._validate_links()
        self.joints = self._topological(list(joints))
        self.feet = tuple(feet)
        for f in self.feet:
            if f.link not in self.links:
                raise ModelError(f"foot {f.name!r} references unknown link {f.link!r}")

        self.floating = self.joints[0].type == "floating"
        for j in self.joints[1:]:
            if j.type == "floating":
                raise ModelError(f"floating joint {j.name!r} is not the root")

        nq = nv = 0
        self.q_index, self.v_index = [], []
        for j in self.joints:
            dq, dv = (7, 6) if j.type == "floating" else (1, 1)
            self.q_index.append(slice(nq, nq + dq))
            self.v_index.append(slice(nv, nv + dv))
            nq += dq
            nv += dv
        self.nq, self.nv = nq, nv
        self.nvu = 6 if self.floating else 0

        name_to_idx = {j.child: i for i, j in enumerate(self.joints)}
        self.parent = np.array([name_to_idx.get(j.parent, -1) for j in self.joints])
        self.link_joint = name_to_idx

        act = [i for i, j in enumerate(self.joints) if j.type != "floating" and j.actuated]
        self.actuated_joints = tuple(act)
        self.actuated_v = np.array([self.v_index[i].start for i in act], dtype=int)
        self.nva = len(act)
        limits = np.array([self.joints[i].torque_limit for i in act], dtype=float)
        if np.any(~(limits > 0)):
            raise ModelError("every actuated joint needs a torque limit > 0")
        self.torque_limits = limits
        self.B = np.zeros((self.nv, self.nva))
        self.B[self.actuated_v, np.arange(self.nva)] = 1.0

        self._body_inertia = []
        for j in self.joints:
            link = self.links[j.child]
            self._body_inertia.append((link.mass, np.asarray(link.com, float),
                                       np.asarray(link.inertia, float)))
        self._foot_joint = [self.link_joint[f.link] for f in self.feet]
        # joints supporting each body, root first
        self._support = []
        for i in range(len(self.joints)):
            chain = []
            k = i
            while k >= 0:
                chain.append(k)
                k = self.parent[k]
            self._support.append(chain[::-1])
        self._arr = self._pack()

    def _pack(self):
        nj = len(self.joints)
        ancestor = np.zeros((nj, nj), dtype=np.bool_)
        for i, chain in enumerate(self._support):
            ancestor[i, chain] = True
        return dict(
            jtype=np.array([JOINT_TYPES.index(j.type) for j in self.joints], dtype=np.int64),
            parent=np.asarray(self.parent, dtype=np.int64),
            axis=np.array([j.axis for j in self.joints], dtype=float),
            prot=np.array([j.rotation for j in self.joints], dtype=float),
            ptrans=np.array([j.translation for j in self.joints], dtype=float),
            qstart=np.array([s.start for s in self.q_index], dtype=np.int64),
            vstart=np.array([s.start for s in self.v_index], dtype=np.int64),
            nvj=np.array([s.stop - s.start for s in self.v_index], dtype=np.int64),
            mass=np.array([b[0] for b in self._body_inertia], dtype=float),
            com=np.array([b[1] for b in self._body_inertia], dtype=float).reshape(nj, 3),
            inertia=np.array([b[2] for b in self._body_inertia], dtype=float).reshape(nj, 3, 3),
            ancestor=ancestor,
            foot_body=np.array(self._foot_joint, dtype=np.int64),
            foot_point=np.array([f.point for f in self.feet], dtype=float).reshape(-1, 3),
        )

    def _validate_links(self):
        for link in self.links.values():
            validate_link(link)

    def _topological(self, joints):
        seen_child = {}
        for j in joints:
            if j.type not in JOINT_TYPES:
                raise ModelError(f"joint {j.name!r}: unknown type {j.type!r}")
            if j.child not in self.links:
                raise ModelError(f"joint {j.name!r}: unknown child link {j.child!r}")
            if j.parent != "world" and j.parent not in self.links:
                raise ModelError(f"joint {j.name!r}: unknown parent link {j.parent!r}")
            if j.child in seen_child:
                raise ModelError(f"link {j.child!r} has two parent joints "
                                 f"({seen_child[j.child]!r}, {j.name!r}): not a tree")
            seen_child[j.child] = j.name
        roots = [j for j in joints if j.parent == "world"]
        if len(roots) != 1:
            raise ModelError(f"expected exactly one root joint, found {len(roots)}")
        orphans = set(self.links) - set(seen_child)
        if orphans:
            raise ModelError(f"links without a parent joint: {sorted(orphans)}")
        # depth-first, children in declaration order
        ordered = []

        def visit(parent):
            for j in joints:
                if j.parent == parent:
                    ordered.append(j)
                    visit(j.child)

        visit("world")
        placed = {id(j) for j in ordered}
        remaining = [j for j in joints if id(j) not in placed]
        if remaining:
            raise ModelError(f"joints not reachable from world (cycle): {[j.name for j in remaining]}")
        return ordered

    @property
    def n_feet(self):
        return len(self.feet)

    @property
    def total_mass(self):
        return sum(l.mass for l in self.links.values())

    def neutral_configuration(self):
        q = np.zeros(self.nq)
        if self.floating:
            q[3] = 1.0
        return q

    def actuated_positions(self, q):
        return np.array([q[self.q_index[i].start] for i in self.actuated_joints])

    def foot_chain(self, foot_index):
        """Joint indices from the root to the foot's link (root first)."""
        return list(self._support[self._foot_joint[foot_index]])


@dataclass
class RobotState:
    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def copy(self):
        return RobotState(self.q.copy(), self.v.copy(), self.t)


@dataclass(frozen=True)
class ContactSet:
    """Feet in stance, kept sorted by model foot index."""
    active: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "active", tuple(sorted(set(int(i) for i in self.active))))

    @property
    def n_c(self):
        return len(self.active)

    def __contains__(self, foot):
        return foot in self.active


def check_state(model: RobotModel, state: RobotState):
    if len(state.q) != model.nq or len(state.v) != model.nv:
        raise ModelError(f"state dims (q={len(state.q)}, v={len(state.v)}) do not match "
                         f"model (nq={model.nq}, nv={model.nv})")
    if model.floating:
        n = np.linalg.norm(state.q[3:7])
        if abs(n - 1.0) > 1e-9:
            raise ModelError(f"base quaternion norm {n:.12f} != 1")


class Kinematics:
    """Per-state cache of world poses, motion subspaces and foot kinematics.

    Everything is computed on first use and reused, so one instance serves
    all the dynamics queries of a control or simulation step.
    """

    def __init__(self, model: RobotModel, state: RobotState):
        check_state(model, state)
        self.model = model
        self.state = state
        a = model._arr
        self.rot, self.pos, self.S, self.vel, self.cbias = _k.forward_kinematics(
            np.asarray(state.q, float), np.asarray(state.v, float), a["jtype"], a["parent"],
            a["axis"], a["prot"], a["ptrans"], a["qstart"], a["vstart"], a["nvj"])
        self._iw = None
        self._mass = None
        self._feet = None

    @property
    def spatial_inertias(self):
        if self._iw is None:
            a = self.model._arr
            self._iw = _k.spatial_inertias(self.rot, self.pos, a["mass"], a["com"], a["inertia"])
        return self._iw

    def mass_matrix(self):
        if self._mass is None:
            a = self.model._arr
            self._mass = _k.crba(self.spatial_inertias, self.S, a["parent"], a["vstart"],
                                 a["nvj"], a["ancestor"])
        return self._mass

    def rnea(self, vdot, gravity=GRAVITY):
        a = self.model._arr
        return _k.rnea(np.asarray(vdot, float), np.asarray(gravity, float), self.spatial_inertias,
                       self.S, self.vel, self.cbias, a["parent"], a["vstart"], a["nvj"])

    def feet(self):
        """(positions, velocities, jacobians, drift accelerations) of every foot."""
        if self._feet is None:
            a = self.model._arr
            self._feet = _k.points(self.rot, self.pos, self.S, self.vel, self.cbias, a["parent"],
                                   a["vstart"], a["nvj"], a["ancestor"], a["foot_body"],
                                   a["foot_point"])
        return self._feet

    def point(self, body, local):
        return self.pos[body] + self.rot[body] @ np.asarray(local, float)


def _kin(model, state, kin):
    return kin if kin is not None else Kinematics(model, state)


def mass_matrix(model: RobotModel, state: RobotState, kin: Kinematics | None = None):
    """Joint-space inertia matrix M(q) by the composite-rigid-body algorithm."""
    return _kin(model, state, kin).mass_matrix()


def rnea(model: RobotModel, state: RobotState, vdot, gravity=GRAVITY, kin=None):
    """Inverse dynamics by recursive Newton-Euler: returns M vdot + H."""
    return _kin(model, state, kin).rnea(vdot, gravity)


def nonlinear_effects(model: RobotModel, state: RobotState, gravity=GRAVITY, kin=None):
    """Coriolis, centrifugal and gravity terms H(q, v) (RNEA with zero acceleration)."""
    return _kin(model, state, kin).rnea(np.zeros(model.nv), gravity)


def _foot(model, foot_index):
    if not 0 <= foot_index < model.n_feet:
        raise ModelError(f"invalid foot index {foot_index} (model has {model.n_feet} feet)")
    return foot_index


def foot_position(model, state, foot_index, kin=None):
    return _kin(model, state, kin).feet()[0][_foot(model, foot_index)].copy()


def foot_velocity(model, state, foot_index, kin=None):
    return _kin(model, state, kin).feet()[1][_foot(model, foot_index)].copy()


def foot_jacobian(model, state, foot_index, kin=None):
    return _kin(model, state, kin).feet()[2][_foot(model, foot_index)].copy()


def contact_jacobian(model, state, contacts: ContactSet, kin=None):
    """Stacked 3-row world-frame translational Jacobians of the active feet."""
    if not contacts.active:
        return np.zeros((0, model.nv))
    jac = _kin(model, state, kin).feet()[2]
    return jac[[_foot(model, i) for i in contacts.active]].reshape(-1, model.nv)


def jacobian_dot_v(model, state, contacts: ContactSet, kin=None):
    """Drift acceleration Jdot_c v of the active contact points."""
    if not contacts.active:
        return np.zeros(0)
    drift = _kin(model, state, kin).feet()[3]
    return drift[[_foot(model, i) for i in contacts.active]].reshape(-1)


def generalized_force(model, state, u, foot_forces=None, kin=None):
    """B u + sum_i J_i^T f_i for per-foot world forces (mapping or sequence)."""
    tau = model.B @ np.asarray(u, float) if model.nva else np.zeros(model.nv)
    if foot_forces is not None:
        jac = _kin(model, state, kin).feet()[2]
        items = foot_forces.items() if isinstance(foot_forces, dict) else enumerate(foot_forces)
        for i, f in items:
            if f is not None:
                tau = tau + jac[_foot(model, i)].T @ np.asarray(f, float)
    return tau


def forward_dynamics(model, state, u, external_foot_forces=None, gravity=GRAVITY, kin=None):
    """vdot = M^-1 (B u + J^T lambda - H), solved with a dense Cholesky factorization."""
    kin = _kin(model, state, kin)
    rhs = generalized_force(model, state, u, external_foot_forces, kin) - kin.rnea(
        np.zeros(model.nv), gravity)
    return cho_solve(cho_factor(kin.mass_matrix()), rhs)


def integrate(model: RobotModel, state: RobotState, vdot, dt):
    """Semi-implicit Euler: velocity first, then configuration with the new velocity."""
    v = state.v + np.asarray(vdot) * dt
    return RobotState(integrate_configuration(model, state.q, v * dt), v, state.t + dt)


def integrate_configuration(model: RobotModel, q, dv):
    """q (+) dv. The base position moves along the body-frame velocity rotated at q;
    the orientation is updated with the quaternion exponential and renormalized."""
    q = np.array(q, dtype=float)
    for i, j in enumerate(model.joints):
        qs, vs = model.q_index[i], model.v_index[i]
        if j.type == "floating":
            base = q[qs]
            d = dv[vs]
            base[:3] += quat_to_rot(base[3:7]) @ d[:3]
            quat = quat_multiply(base[3:7], quat_exp(d[3:]))
            base[3:7] = quat / np.linalg.norm(quat)
            q[qs] = base
        else:
            q[qs] += dv[vs]
    return q


def kinetic_energy(model, state, kin=None):
    return 0.5 * state.v @ mass_matrix(model, state, kin) @ state.v


def potential_energy(model, state, gravity=GRAVITY, kin=None):
    kin = _kin(model, state, kin)
    energy = 0.0
    for i, (mass, com, _) in enumerate(model._body_inertia):
        c = kin.pos[i] + kin.rot[i] @ com
        energy -= mass * np.dot(gravity, c)
    return energy
