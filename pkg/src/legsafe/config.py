"""Scenario configuration: YAML file + ``key=value`` overrides, validated
against a fixed tree of known keys and documented numeric ranges."""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .filter import FilterConfig, bump_profile
from .gait import GaitSchedule, TrotController
from .modelfile import load_builtin, load_model
from .sim import SimConfig, Terrain


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "model": "a1_approx",
    "duration": 6.0,
    "control_dt": 0.002,
    "contact_mode": "sensed",
    "init_noise": 0.0,
    "terrain": {"mu_true": 0.8, "profile": "flat", "params": {}},
    "gait": {"gait_period": 0.6, "duty": 0.5, "step_height": 0.10, "step_length": None,
             "body_velocity_target": 0.0, "kp": 60.0, "kd": 2.0},
    "filter": {"enabled": True, "start": 0.0, "mu": 0.8, "alpha1": 20.0, "alpha2": 20.0,
               "friction_enabled": True, "torque_limits_enabled": True, "cbf_enabled": True,
               "lambda_z_min": 1.0, "obstacle_height": None, "obstacle_base": -0.04,
               "mu_source": "config", "estimator": None, "mu_time_constant": 0.5,
               "mu_update_period": 0.03},
    "sim": {"dt_sim": 1e-3, "stiffness": 3e4, "damping": 1e3, "v_eps": 1e-4},
    "data": {"n_samples": 512, "mu_min": 0.2, "mu_max": 1.0, "run_duration": 3.0,
             "window_stride": 0.15, "body_velocity": 0.3},
    "estimator": {"d": 32, "heads": 4, "layers": 2, "k": 32, "d_ff": 64},
    "train": {"epochs": 20, "batch_size": 32, "lr": 2e-3, "lr_min": 1e-4,
              "weight_decay": 0.0, "grad_clip": 1.0, "time_limit": None},
}

# (low, high) inclusive; None = unbounded on that side
RANGES = {
    "duration": (1e-3, 600.0),
    "control_dt": (5e-4, 0.01),
    "init_noise": (0.0, 0.2),
    "terrain.mu_true": (1e-3, 2.0),
    "gait.gait_period": (0.2, 2.0),
    "gait.duty": (0.05, 0.95),
    "gait.step_height": (0.0, 0.2),
    "gait.kp": (0.0, 500.0),
    "gait.kd": (0.0, 50.0),
    "filter.start": (0.0, None),
    "filter.mu": (1e-3, 2.0),
    "filter.alpha1": (1.0, 200.0),
    "filter.alpha2": (1.0, 200.0),
    "filter.lambda_z_min": (0.0, 50.0),
    "filter.obstacle_height": (-0.04, 0.15),
    "filter.obstacle_base": (-0.1, 0.0),
    "filter.mu_time_constant": (0.0, 60.0),
    "filter.mu_update_period": (0.002, 10.0),
    "sim.dt_sim": (1e-5, 0.01),
    "sim.stiffness": (1e2, 1e7),
    "sim.damping": (1e-1, 1e5),
    "sim.v_eps": (1e-8, 1e-1),
    "data.n_samples": (1, 10 ** 6),
    "data.mu_min": (1e-3, 2.0),
    "data.mu_max": (1e-3, 2.0),
    "data.run_duration": (1.3, 60.0),
    "data.window_stride": (0.002, 5.0),
    "train.epochs": (1, 10000),
    "train.batch_size": (1, 100000),
    "train.lr": (0.0, 1.0),
}
TERRAIN_PARAMS = {"flat": (), "slope": ("grade_x", "grade_y"), "waves": ("amplitude", "wavelength")}
CHOICES = {"contact_mode": ("sensed", "schedule"), "terrain.profile": tuple(TERRAIN_PARAMS),
           "filter.mu_source": ("config", "estimator")}

# Recommended envelope for the clearance guarantee (see README).
CLEARANCE_HEIGHT_RANGE = (0.05, 0.11)
CLEARANCE_GAIN_RANGE = (15.0, 35.0)


def _merge(base, update, path=""):
    for key, val in update.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"{full!r} must be a mapping")
            _merge(base[key], val, full + ".")
        else:
            base[key] = val


def parse_override(text):
    """``"a.b=value"`` -> ({"a": {"b": value}}); the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        val = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    out = cur = {}
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = val
    return out


def _get(cfg, dotted):
    cur = cfg
    for p in dotted.split("."):
        cur = cur[p]
    return cur


def validate(cfg):
    for key, (lo, hi) in RANGES.items():
        val = _get(cfg, key)
        if val is None:
            continue
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{key} must be a number, got {val!r}")
        if (lo is not None and val < lo) or (hi is not None and val > hi):
            raise ConfigError(f"{key} = {val} outside the documented range [{lo}, {hi}]")
    for key, options in CHOICES.items():
        if _get(cfg, key) not in options:
            raise ConfigError(f"{key} must be one of {options}")
    unknown = set(cfg["terrain"]["params"]) - set(TERRAIN_PARAMS[cfg["terrain"]["profile"]])
    if unknown:
        raise ConfigError(f"unknown terrain.params for {cfg['terrain']['profile']!r}: "
                          f"{sorted(unknown)}")
    if cfg["sim"]["dt_sim"] > cfg["control_dt"]:
        raise ConfigError("sim.dt_sim must not exceed control_dt")
    if cfg["data"]["mu_min"] >= cfg["data"]["mu_max"]:
        raise ConfigError("data.mu_min must be below data.mu_max")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    if cfg["filter"]["mu_source"] == "estimator":
        ckpt = cfg["filter"]["estimator"]
        if not ckpt or not Path(str(ckpt)).is_file():
            raise ConfigError("filter.mu_source=estimator needs filter.estimator, "
                              f"an existing checkpoint file (got {ckpt!r})")
    model = cfg["model"]
    if not isinstance(model, str):
        raise ConfigError("model must be a builtin name or a file path")
    if model.endswith(".robot") and not Path(model).is_file():
        raise ConfigError(f"model file {model!r} does not exist")
    return cfg


def load_config(path=None, overrides=(), preset=None, seed=None):
    """Defaults <- preset <- file <- overrides <- seed; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset:
        _merge(cfg, preset)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, data)
    for o in overrides:
        _merge(cfg, parse_override(o))
    if seed is not None:
        cfg["seed"] = seed
    return validate(cfg)


# ------------------------------------------------------------------ builders

def build_model(cfg):
    name = cfg["model"]
    return load_model(name) if name.endswith(".robot") else load_builtin(name)


def build_terrain(cfg):
    t = cfg["terrain"]
    return Terrain(mu_true=float(t["mu_true"]), profile=t["profile"], params=dict(t["params"]))


def build_sim(cfg):
    s = cfg["sim"]
    return SimConfig(dt_sim=float(s["dt_sim"]), stiffness=float(s["stiffness"]),
                     damping=float(s["damping"]), v_eps=float(s["v_eps"]),
                     duration=float(cfg["duration"]), seed=cfg["seed"])


def build_schedule(cfg):
    g = cfg["gait"]
    return GaitSchedule(gait_period=float(g["gait_period"]), duty=float(g["duty"]),
                        step_length=g["step_length"], step_height=float(g["step_height"]),
                        body_velocity_target=float(g["body_velocity_target"]))


def build_controller(cfg, model):
    return TrotController(model, build_schedule(cfg), kp=float(cfg["gait"]["kp"]),
                          kd=float(cfg["gait"]["kd"]))


def build_filter_config(cfg):
    f = cfg["filter"]
    h = f["obstacle_height"]
    prof = None if h is None else bump_profile(float(h), base=float(f["obstacle_base"]))
    return FilterConfig(mu=float(f["mu"]), alpha1=float(f["alpha1"]), alpha2=float(f["alpha2"]),
                        gait_period=float(cfg["gait"]["gait_period"]), obstacle_profile=prof,
                        cbf_enabled=bool(f["cbf_enabled"]),
                        friction_enabled=bool(f["friction_enabled"]),
                        torque_limits_enabled=bool(f["torque_limits_enabled"]),
                        lambda_z_min=float(f["lambda_z_min"]))


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=True)


def make_rng(cfg):
    """The single generator every random draw of a run comes from."""
    return np.random.default_rng(cfg["seed"])
