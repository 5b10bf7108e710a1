"""Line-oriented robot description format.

Each non-blank, non-comment line declares one element::

    robot <name>
    link  <name> mass=<kg> com=x,y,z inertia=ixx,iyy,izz[,ixy,ixz,iyz]
    joint <name> type=<floating|revolute|prismatic> parent=<link|world> child=<link>
          [axis=x,y,z] [xyz=x,y,z] [rpy=r,p,y] [limit=<N m>] [actuated=<true|false>]
    foot  <name> link=<link> point=x,y,z

Errors carry the offending line number.
"""
from __future__ import annotations

import shlex
from importlib import resources
from pathlib import Path

import numpy as np

from .model import Foot, Joint, Link, ModelError, RobotModel, validate_link
from .spatial import rpy_to_rot


class ModelFileError(ModelError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _vec(text, n, line, key):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise ModelFileError(line, f"{key}: not a list of numbers: {text!r}") from None
    if len(vals) not in ((n,) if isinstance(n, int) else n):
        raise ModelFileError(line, f"{key}: expected {n} values, got {len(vals)}")
    return np.array(vals)


def _inertia(vals):
    if len(vals) == 3:
        return np.diag(vals)
    ixx, iyy, izz, ixy, ixz, iyz = vals
    return np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])


def _fields(tokens, line, allowed, required):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ModelFileError(line, f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        if key not in allowed:
            raise ModelFileError(line, f"unknown key {key!r}")
        out[key] = val
    missing = [k for k in required if k not in out]
    if missing:
        raise ModelFileError(line, f"missing {', '.join(missing)}")
    return out


def parse_model(text: str) -> RobotModel:
    name = "robot"
    links, joints, feet = [], [], []
    link_line, joint_line = {}, {}
    child_of = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = shlex.split(stripped)
        kind = tokens[0]
        if kind == "robot":
            name = tokens[1]
            continue
        if len(tokens) < 2:
            raise ModelFileError(lineno, f"{kind}: missing name")
        ident = tokens[1]
        if kind == "link":
            f = _fields(tokens[2:], lineno, {"mass", "com", "inertia"}, ["mass", "inertia"])
            if ident in link_line:
                raise ModelFileError(lineno, f"duplicate link {ident!r} (first on line {link_line[ident]})")
            try:
                mass = float(f["mass"])
            except ValueError:
                raise ModelFileError(lineno, f"mass: not a number: {f['mass']!r}") from None
            com = _vec(f.get("com", "0,0,0"), 3, lineno, "com")
            inertia = _inertia(_vec(f["inertia"], (3, 6), lineno, "inertia"))
            link = Link(ident, mass, inertia, com)
            try:
                validate_link(link)
            except ModelError as exc:
                raise ModelFileError(lineno, str(exc)) from None
            links.append(link)
            link_line[ident] = lineno
        elif kind == "joint":
            f = _fields(tokens[2:], lineno,
                        {"type", "parent", "child", "axis", "xyz", "rpy", "limit", "actuated"},
                        ["type", "parent", "child"])
            if f["type"] not in ("floating", "revolute", "prismatic"):
                raise ModelFileError(lineno, f"unknown joint type {f['type']!r}")
            child = f["child"]
            if child in child_of:
                raise ModelFileError(lineno, f"link {child!r} already has parent joint on line "
                                             f"{joint_line[child_of[child]]}: not a tree")
            axis = _vec(f.get("axis", "0,0,1"), 3, lineno, "axis")
            if np.linalg.norm(axis) == 0:
                raise ModelFileError(lineno, "axis must be nonzero")
            axis = axis / np.linalg.norm(axis)
            actuated = f.get("actuated", "true").lower() in ("1", "true", "yes")
            limit = float(f["limit"]) if "limit" in f else np.inf
            if f["type"] != "floating" and actuated and "limit" not in f:
                raise ModelFileError(lineno, "actuated joint needs limit=")
            if "limit" in f and not limit > 0:
                raise ModelFileError(lineno, "limit must be > 0")
            joints.append(Joint(ident, f["type"], f["parent"], child, axis,
                                rpy_to_rot(_vec(f.get("rpy", "0,0,0"), 3, lineno, "rpy")),
                                _vec(f.get("xyz", "0,0,0"), 3, lineno, "xyz"),
                                actuated and f["type"] != "floating", limit))
            child_of[child] = ident
            joint_line[ident] = lineno
        elif kind == "foot":
            f = _fields(tokens[2:], lineno, {"link", "point"}, ["link"])
            feet.append(Foot(ident, f["link"], _vec(f.get("point", "0,0,0"), 3, lineno, "point")))
        else:
            raise ModelFileError(lineno, f"unknown element {kind!r}")

    # reachability from world, reported against the joint's own line
    reach = {"world"}
    changed = True
    while changed:
        changed = False
        for j in joints:
            if j.parent in reach and j.child not in reach:
                reach.add(j.child)
                changed = True
    for j in joints:
        if j.parent != "world" and j.parent not in link_line:
            raise ModelFileError(joint_line[j.name], f"unknown parent link {j.parent!r}")
        if j.child not in link_line:
            raise ModelFileError(joint_line[j.name], f"unknown child link {j.child!r}")
        if j.child not in reach:
            raise ModelFileError(joint_line[j.name], f"joint {j.name!r} is on a cycle or "
                                                     "disconnected from world: not a tree")
    return RobotModel(links, joints, feet, name=name)


def load_model(path) -> RobotModel:
    return parse_model(Path(path).read_text())


def load_builtin(name: str) -> RobotModel:
    """Load a model shipped in ``legsafe/data`` (e.g. ``"a1_approx"``)."""
    text = resources.files("legsafe.data").joinpath(f"{name}.robot").read_text()
    return parse_model(text)
