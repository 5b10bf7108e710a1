"""Experiment protocols shared by the command line and the acceptance tests."""
from __future__ import annotations

import numpy as np

from . import config as C
from .filter import SafetyFilter
from .robots import standing_state
from .scenario import cone_violation, run_scenario

FRICTION_PRESET = {"duration": 6.0, "filter": {"start": 3.0, "mu": 0.2}}
CLEARANCE_PRESET = {"duration": 3.0,
                    "filter": {"obstacle_height": 0.07, "friction_enabled": False}}
FEET = ("FR", "FL", "RR", "RL")


def initial_state(cfg, model, rng):
    state = standing_state(model)
    if cfg["init_noise"] > 0:
        state.q[7:] += rng.uniform(-1, 1, model.nva) * cfg["init_noise"]
    return state


def simulate(cfg, with_filter=None):
    """One closed-loop run from a validated config; returns the log."""
    rng = C.make_rng(cfg)
    model = C.build_model(cfg)
    fcfg = C.build_filter_config(cfg)
    on = cfg["filter"]["enabled"] if with_filter is None else with_filter
    return run_scenario(model, C.build_controller(cfg, model), C.build_terrain(cfg),
                        cfg["duration"], SafetyFilter(model, fcfg) if on else None,
                        filter_start=cfg["filter"]["start"], sim_config=C.build_sim(cfg),
                        control_dt=cfg["control_dt"], initial_state=initial_state(cfg, model, rng),
                        barrier_config=fcfg, contact_mode=cfg["contact_mode"],
                        mu_source=mu_source(cfg))


def mu_source(cfg):
    """None (fixed ``filter.mu``) or the online estimator named in the config."""
    f = cfg["filter"]
    if f["mu_source"] != "estimator":
        return None
    from .estimator import OnlineFrictionEstimate, load_checkpoint

    return OnlineFrictionEstimate(load_checkpoint(f["estimator"]), f["mu"],
                                  time_constant=f["mu_time_constant"],
                                  period=f["mu_update_period"], control_dt=cfg["control_dt"])


def lateral_stats(log, mask, source):
    """Mean and max stance lateral force magnitude over masked rows (N)."""
    p = "l" if source == "lambda" else "f"
    vals = []
    for f in FEET:
        st = (log.column(f"{f}_stance") > 0.5) & mask
        vals.append(np.hypot(log.column(f"{f}_{p}x"), log.column(f"{f}_{p}y"))[st])
    v = np.concatenate(vals)
    v = v[np.isfinite(v)]
    return (float(v.mean()), float(v.max())) if v.size else (np.nan, np.nan)


def friction_summary(log, mu):
    act = log.column("filter_active") > 0.5
    post, _ = cone_violation(log, mu, "lambda", mask=act)
    _, pre_ratio = cone_violation(log, mu, "lambda", mask=~act)
    _, true_ratio_pre = cone_violation(log, mu, "true", mask=~act)
    _, true_ratio_post = cone_violation(log, mu, "true", mask=act)
    kkt = log.column("kkt")[act]
    status = log.column("status")
    return {
        "mu": mu,
        "fallen": log.fallen,
        "pre_lateral_mean_true": lateral_stats(log, ~act, "true")[0],
        "post_lateral_mean_true": lateral_stats(log, act, "true")[0],
        "pre_lateral_mean_lambda": lateral_stats(log, ~act, "lambda")[0],
        "post_lateral_mean_lambda": lateral_stats(log, act, "lambda")[0],
        "post_max_cone_violation": float(post.max()) if post.size else np.nan,
        "pre_samples_over_10pct": int(np.sum(pre_ratio > 1.1)),
        "pre_loaded_samples_over_10pct": int(np.sum(np.isfinite(pre_ratio) & (pre_ratio > 1.1))),
        "pre_true_samples_over_10pct": int(np.sum(true_ratio_pre > 1.1)),
        "post_true_samples_over_10pct": int(np.sum(true_ratio_post > 1.1)),
        "post_max_kkt": float(np.nanmax(kkt)) if kkt.size else np.nan,
        "non_optimal_steps": int(sum(1 for s, a in zip(status, act) if a and s != "optimal")),
    }


def friction_demo(cfg):
    """Nominal trot for ``filter.start`` seconds, then the filter with ``filter.mu``."""
    log = simulate(cfg, with_filter=True)
    return log, friction_summary(log, cfg["filter"]["mu"])


def slack_mask(log, threshold=0.1):
    """Steps where at least one barrier row is present and every present row
    is slack by at least ``threshold`` of its bound."""
    sl = np.array([log.column(f"{f}_slack") for f in FEET])
    present = np.isfinite(sl)
    return present.any(axis=0) & np.where(present, sl >= threshold, True).all(axis=0)


def min_clearance(log):
    h = np.array([log.column(f"{f}_h") for f in FEET])
    return float(np.nanmin(h)) if np.isfinite(h).any() else np.nan


def clearance_summary(log_on, log_off):
    mask = slack_mask(log_on)
    it = log_on.column("interference")
    status = log_on.column("status")
    return {
        "min_h_nominal": min_clearance(log_off),
        "min_h_filtered": min_clearance(log_on),
        "fallen_nominal": log_off.fallen,
        "fallen_filtered": log_on.fallen,
        "interference_max": float(it.max()),
        "interference_mean": float(it.mean()),
        "slack_steps": int(mask.sum()),
        "interference_max_when_slack": float(it[mask].max()) if mask.any() else np.nan,
        "non_optimal_steps": int(sum(1 for s in status if s != "optimal")),
    }


def clearance_demo(cfg):
    """Paired runs against the polynomial clearance profile: (filtered, nominal, summary)."""
    log_off = simulate(cfg, with_filter=False)
    log_on = simulate(cfg, with_filter=True)
    return log_on, log_off, clearance_summary(log_on, log_off)


# ------------------------------------------------------------- benchmarks

def attention_timing(L, k=32, d=32, heads=4, repeats=30, seed=0, workspace=True):
    """Median wall-clock seconds of one attention sub-block on an (L, d) input.

    ``workspace=True`` times the buffer-reusing inference path; ``False``
    times the training path, which allocates its intermediates on every call
    and so also pays for the allocator's page faults on large arrays.
    """
    import time

    from .estimator import (EstimatorConfig, Workspace, attention_forward, attention_inference,
                            init_params)

    cfg = EstimatorConfig(d=d, heads=heads, layers=1, k=k, n_steps=L, n_joints=1)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    X = rng.normal(size=(L, d))
    if workspace:
        ws = Workspace()
        run = lambda: attention_inference(params, X, heads=heads, workspace=ws)  # noqa: E731
    else:
        run = lambda: attention_forward(params, X, heads=heads)  # noqa: E731
    run()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        run()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def qp_timing(model, rng, n=200, mu=0.8):
    """Solve times (s) and iteration counts of filter problems at perturbed trot states."""
    import time

    from . import qp
    from .filter import FilterConfig, assemble
    from .gait import GaitSchedule, contact_schedule
    from .model import Kinematics

    cfg, sch = FilterConfig(mu=mu), GaitSchedule()
    times, iters = [], []
    for _ in range(n):
        state = standing_state(model)
        state.q[7:] += rng.uniform(-0.1, 0.1, model.nva)
        state.v[:] = rng.normal(0.0, 0.2, model.nv)
        state.t = float(rng.uniform(0, sch.gait_period))
        kin = Kinematics(model, state)
        u_nom = rng.uniform(-10, 10, model.nva)
        problem = assemble(model, state, contact_schedule(state.t, sch), u_nom, cfg, kin=kin)
        t0 = time.perf_counter()
        sol = qp.solve(problem)
        times.append(time.perf_counter() - t0)
        iters.append(sol.iterations)
    return np.array(times), np.array(iters)


def dynamics_timing(model, rng, n=200):
    """Seconds per (mass matrix + bias forces) evaluation at random states."""
    import time

    from .model import Kinematics

    times = []
    for _ in range(n):
        state = standing_state(model)
        state.q[7:] += rng.uniform(-0.5, 0.5, model.nva)
        state.v[:] = rng.normal(0.0, 1.0, model.nv)
        t0 = time.perf_counter()
        kin = Kinematics(model, state)
        kin.mass_matrix()
        kin.rnea(np.zeros(model.nv))
        times.append(time.perf_counter() - t0)
    return np.array(times)
