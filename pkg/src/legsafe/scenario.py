"""Closed-loop runs: controller -> (optional) safety filter -> simulator, with a
fixed-schema per-control-step log."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .filter import SafetyFilter, barrier_value, implied_contact_forces, phase
from .gait import contact_schedule
from .model import ContactSet, Kinematics, RobotModel, RobotState
from .robots import FOOT_NAMES, standing_state
from .sim import SimConfig, Terrain, step

SCHEMA_VERSION = "legsafe-log/1"
BLANKING = 0.02


def log_columns(n_feet=4, nva=12, foot_names=FOOT_NAMES):
    cols = ["schema", "t", "phi", "filter_active", "status", "iterations", "fallback", "interference",
            "kkt", "mu", "base_x", "base_y", "base_z"]
    for f in foot_names[:n_feet]:
        cols += [f"{f}_stance", f"{f}_h", f"{f}_slack", f"{f}_lx", f"{f}_ly", f"{f}_lz",
                 f"{f}_fx", f"{f}_fy", f"{f}_fz"]
    cols += [f"u_nom_{j}" for j in range(nva)]
    cols += [f"u_{j}" for j in range(nva)]
    cols += [f"q_{j}" for j in range(nva)]
    cols += [f"dq_{j}" for j in range(nva)]
    return cols


STRING_COLUMNS = ("schema", "status")


@dataclass
class ScenarioLog:
    columns: list
    rows: list = field(default_factory=list)
    fallen: bool = False
    fall_time: float = float("nan")

    def column(self, name):
        i = self.columns.index(name)
        if name in STRING_COLUMNS:
            return [r[i] for r in self.rows]
        return np.array([r[i] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path_or_buf=None):
        """Write the log; floats use ``repr`` so a re-run is bitwise comparable."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([x if isinstance(x, str) else repr(float(x)) for x in r])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return text


def read_log(path) -> ScenarioLog:
    problems = check_log_schema(path)
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems[:3]))
    with open(path) as fh:
        reader = csv.reader(fh)
        cols = next(reader)
        rows = [[x if c in STRING_COLUMNS else float(x) for c, x in zip(cols, r)] for r in reader]
    return ScenarioLog(cols, rows)


def check_log_schema(path):
    """Return a list of problems (empty when the log conforms)."""
    problems = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            return ["missing header"]
        n_feet = sum(1 for c in cols if c.endswith("_stance"))
        nva = sum(1 for c in cols if c.startswith("u_nom_"))
        names = [c[:-len("_stance")] for c in cols if c.endswith("_stance")]
        expected = log_columns(n_feet, nva, names)
        if cols != expected:
            problems.append("line 1: header does not match the log columns")
            return problems
        for lineno, r in enumerate(reader, start=2):
            if len(r) != len(cols):
                problems.append(f"line {lineno}: {len(r)} fields, expected {len(cols)}")
                continue
            if r[0] != SCHEMA_VERSION:
                problems.append(f"line {lineno}: schema {r[0]!r}, expected {SCHEMA_VERSION!r}")
                continue
            for c, x in zip(cols, r):
                if c in STRING_COLUMNS:
                    continue
                try:
                    float(x)
                except ValueError:
                    problems.append(f"line {lineno}: column {c}: not a number: {x!r}")
                    break
    return problems


def run_scenario(model: RobotModel, controller, terrain: Terrain, duration,
                 safety_filter: SafetyFilter | None = None, filter_start=0.0,
                 sim_config: SimConfig | None = None, control_dt=0.002, initial_state=None,
                 schedule=None, fall_fraction=0.5, stop_on_fall=True, barrier_config=None,
                 mu_source=None, contact_mode="sensed", log_lambda=True):
    """Run the control loop at ``control_dt`` with simulator substeps.

    Before ``filter_start`` the nominal torque is applied directly and the
    logged lambda is the rigid-contact force that torque implies. The true
    force logged next to it is the simulator's contact force over the first
    substep after the command is applied. ``mu_source(t, log)``, if given,
    sets the filter's friction coefficient every control step; ``log`` holds
    the rows recorded so far.

    ``contact_mode="sensed"`` hands the filter only the scheduled stance feet
    that carried load in the previous simulator substep (a foot contact
    sensor), so a late touchdown is not treated as a stationary contact;
    Barrier rows then apply only to feet that carry no load (in flight).
    ``"schedule"`` uses the schedule alone. ``log_lambda=False`` skips the
    implied-force solve in the nominal phase and logs NaN instead.
    """
    if contact_mode not in ("sensed", "schedule"):
        raise ValueError(f"unknown contact_mode {contact_mode!r}")
    sim_config = sim_config or SimConfig()
    if sim_config.dt_sim > control_dt + 1e-15:
        raise ValueError("dt_sim must not exceed the control period")
    n_sub = int(round(control_dt / sim_config.dt_sim))
    if abs(n_sub * sim_config.dt_sim - control_dt) > 1e-12:
        raise ValueError("control_dt must be a multiple of dt_sim")
    schedule = schedule or controller.schedule
    state = initial_state.copy() if initial_state is not None else standing_state(model)
    z_nominal = state.q[2]
    names = [f.name for f in model.feet]
    log = ScenarioLog(log_columns(model.n_feet, model.nva, names))
    bconf = barrier_config or (safety_filter.config if safety_filter is not None else None)
    n_steps = int(round(duration / control_dt))
    guess = None
    nan3 = [np.nan] * 3
    for k in range(n_steps):
        t = k * control_dt
        state.t = t
        kin = Kinematics(model, state)
        contacts = scheduled = contact_schedule(t, schedule)
        flight = None
        if contact_mode == "sensed":
            loaded = guess if guess is not None else np.full((model.n_feet, 3), 1.0)
            contacts = ContactSet(tuple(f for f in contacts.active if loaded[f][2] > 0))
            flight = tuple(f for f in range(model.n_feet) if loaded[f][2] <= 0)
        u_nom = controller(state)
        ph = phase(t, schedule.gait_period).phi
        active = safety_filter is not None and t >= filter_start - 1e-12
        slack = {}
        if active:
            if mu_source is not None:
                safety_filter.config.mu = float(mu_source(t, log))
            dec = safety_filter.step(state, contacts, u_nom, kin=kin, flight=flight)
            u = dec.u_filtered
            lam = dec.lam.reshape(-1, 3)
            status, iters, fb, interf = dec.status, dec.iterations, dec.fallback, dec.interference
            kkt = max(dec.kkt)
            for f, (res, bound) in dec.slack.items():
                slack[f] = res / abs(bound) if bound != 0 else np.inf
        else:
            u = u_nom
            if log_lambda:
                _, lam = implied_contact_forces(model, state, contacts, u_nom, kin)
                lam = lam.reshape(-1, 3)
            else:
                lam = np.full((len(contacts.active), 3), np.nan)
            status, iters, fb, interf, kkt = "nominal", 0, False, 0.0, np.nan
        forces_first = None
        for sub in range(n_sub):
            state, info = step(model, state, u, terrain, sim_config, info=True, guess=guess)
            guess = info.forces
            if sub == 0:
                forces_first = info.forces
        mu_used = safety_filter.config.mu if active else np.nan
        row = [SCHEMA_VERSION, t, ph, float(active), status, iters, float(fb), interf, kkt, mu_used,
               kin.state.q[0], kin.state.q[1], kin.state.q[2]]
        for f in range(model.n_feet):
            st = f in contacts
            swinging = f not in scheduled
            h = barrier_value(model, kin.state, f, bconf, ph, kin) if (bconf and swinging) else np.nan
            lf = list(lam[contacts.active.index(f)]) if st else nan3
            row += [float(st), h, slack.get(f, np.nan)] + lf + list(forces_first[f])
        row += list(u_nom) + list(u)
        row += list(kin.state.q[7:]) + list(kin.state.v[model.actuated_v])
        log.rows.append(row)
        if state.q[2] < fall_fraction * z_nominal and not log.fallen:
            log.fallen = True
            log.fall_time = state.t
            if stop_on_fall:
                break
    return log


def stance_mask(log: ScenarioLog, foot_name, blanking=BLANKING):
    """Stance samples outside the blanking window after a scheduled or actual touchdown."""
    t = log.column("t")
    stance = log.column(f"{foot_name}_stance") > 0.5
    fz = log.column(f"{foot_name}_fz")
    keep = stance.copy()
    last_td = -np.inf
    for i in range(len(t)):
        started = stance[i] and (i == 0 or not stance[i - 1])
        landed = fz[i] > 0 and (i > 0 and fz[i - 1] <= 0)
        if (started and i > 0) or landed:
            last_td = t[i]
        if t[i] - last_td < blanking - 1e-12:
            keep[i] = False
    return keep


def measure_grf_error(log: ScenarioLog, blanking=BLANKING, t_min=0.0, filtered_only=False):
    """(vertical MAE, lateral MAE) between logged lambda and true contact force, in N.

    Lateral error is taken per tangential component (x and y pooled).
    """
    names = [c[:-len("_stance")] for c in log.columns if c.endswith("_stance")]
    t = log.column("t")
    active = log.column("filter_active") > 0.5
    ez, et = [], []
    for f in names:
        keep = stance_mask(log, f, blanking) & (t >= t_min)
        if filtered_only:
            keep &= active
        ez.append(np.abs(log.column(f"{f}_lz") - log.column(f"{f}_fz"))[keep])
        et.append(np.abs(log.column(f"{f}_lx") - log.column(f"{f}_fx"))[keep])
        et.append(np.abs(log.column(f"{f}_ly") - log.column(f"{f}_fy"))[keep])
    ez, et = np.concatenate(ez), np.concatenate(et)
    if ez.size == 0:
        raise ValueError("no stance samples outside the blanking windows")
    return float(ez.mean()), float(et.mean())


def cone_violation(log: ScenarioLog, mu, source="lambda", blanking=BLANKING, mask=None):
    """Per-sample max(|x|, |y|) - mu/sqrt(2) z over non-blanked stance samples.

    ``source`` is ``"lambda"`` (logged QP/implied force) or ``"true"``.
    Returns (values, relative excess ratio max(|x|,|y|) / (mu~ z)).
    """
    names = [c[:-len("_stance")] for c in log.columns if c.endswith("_stance")]
    mt = mu / np.sqrt(2.0)
    p = "l" if source == "lambda" else "f"
    vals, ratios = [], []
    for f in names:
        keep = stance_mask(log, f, blanking)
        if mask is not None:
            keep &= mask
        x, y, z = (log.column(f"{f}_{p}{a}")[keep] for a in "xyz")
        tang = np.maximum(np.abs(x), np.abs(y))
        vals.append(tang - mt * z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios.append(np.where(z > 0, tang / (mt * z), np.inf))
    return np.concatenate(vals), np.concatenate(ratios)
