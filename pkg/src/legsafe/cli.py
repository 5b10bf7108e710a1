"""legsafe command line: simulation, filter experiments, estimator data and training."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import experiments as X

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _print_summary(title, summary, stream=None):
    stream = stream or sys.stdout
    print(f"[{title}]", file=stream)
    for k, v in summary.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        print(f"  {k}: {v}", file=stream)


def _cfg(args, preset=None):
    return C.load_config(args.config, args.set or (), preset=preset, seed=args.seed)


def _out(args, default):
    return Path(args.out or default)


# -------------------------------------------------------------- subcommands

def cmd_simulate(args):
    cfg = _cfg(args)
    log = X.simulate(cfg)
    out = _out(args, "run.csv")
    log.to_csv(out)
    summary = {"steps": len(log), "fallen": log.fallen, "min_base_z": float(log.column("base_z").min()),
               "min_h": X.min_clearance(log), "log": str(out)}
    if log.fallen:
        summary["fall_time"] = log.fall_time
    _print_summary("simulate", summary)
    if log.fallen:
        print(f"error: robot fell at t = {log.fall_time:.3f} s (base below threshold)",
              file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_friction_demo(args):
    cfg = _cfg(args, X.FRICTION_PRESET)
    log, summary = X.friction_demo(cfg)
    out = _out(args, "friction.csv")
    log.to_csv(out)
    summary["log"] = str(out)
    _print_summary("friction-demo", summary)
    ok = summary["post_max_cone_violation"] <= 1e-6 and not log.fallen
    print("cone check (post-activation violation <= 1e-6):", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_clearance_demo(args):
    cfg = _cfg(args, X.CLEARANCE_PRESET)
    log_on, log_off, summary = X.clearance_demo(cfg)
    out = _out(args, "clearance.csv")
    nominal = out.with_name(out.stem + "_nominal" + out.suffix)
    log_on.to_csv(out)
    log_off.to_csv(nominal)
    summary.update(log_filtered=str(out), log_nominal=str(nominal))
    _print_summary("clearance-demo", summary)
    return EXIT_FAILED if log_on.fallen else EXIT_OK


def cmd_gen_data(args):
    from .estimator import generate_synthetic_dataset

    cfg = _cfg(args)
    d = cfg["data"]
    ds = generate_synthetic_dataset(
        int(d["n_samples"]), (float(d["mu_min"]), float(d["mu_max"])), seed=cfg["seed"],
        robot=C.build_model(cfg), run_duration=float(d["run_duration"]),
        window_stride=float(d["window_stride"]), body_velocity=float(d["body_velocity"]),
        control_dt=cfg["control_dt"], progress=lambda s: print(s, file=sys.stderr))
    out = _out(args, "dataset.bin")
    ds.save(out)
    counts = {s: len(ds.split_indices(s)) for s in ("train", "val", "test")}
    _print_summary("gen-data", {"samples": len(ds), **counts, "runs": int(ds.run.max()) + 1,
                                "dataset": str(out)})
    return EXIT_OK


def cmd_train(args):
    from .estimator import Dataset, Estimator, EstimatorConfig, TrainConfig, save_checkpoint, train

    cfg = _cfg(args)
    ds = Dataset.load(args.data)
    e, t = cfg["estimator"], cfg["train"]
    n_steps = int(ds.meta.get("n_steps", ds.features.shape[1]))
    n_joints = ds.features.shape[2] // 3
    ecfg = EstimatorConfig(d=int(e["d"]), heads=int(e["heads"]), layers=int(e["layers"]),
                           k=int(e["k"]), d_ff=int(e["d_ff"]), n_steps=n_steps, n_joints=n_joints)
    model = Estimator.create(ecfg, seed=cfg["seed"])
    tcfg = TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
                       lr_min=float(t["lr_min"]), weight_decay=float(t["weight_decay"]),
                       grad_clip=float(t["grad_clip"]), seed=cfg["seed"],
                       time_limit=t["time_limit"])
    history = train(model, ds, tcfg, log=lambda s: print(s, file=sys.stderr))
    out = _out(args, "model.bin")
    save_checkpoint(out, model)
    metrics = Path(args.metrics) if args.metrics else out.with_suffix(".metrics.csv")
    with open(metrics, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(history[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(history)
    best = min(h["val_mae"] for h in history)
    _print_summary("train", {"epochs": len(history), "best_val_mae": best,
                             "checkpoint": str(out), "metrics": str(metrics)})
    return EXIT_OK


def cmd_evaluate(args):
    from .estimator import Dataset, load_checkpoint

    ds = Dataset.load(args.data)
    model = load_checkpoint(args.model)
    split = args.split
    x, y = ds.split(split)
    if not len(y):
        print(f"error: split {split!r} is empty", file=sys.stderr)
        return EXIT_CONFIG
    pred = model.predict(x)
    xtr, ytr = ds.split("train")
    base = float(np.mean(np.abs(y - (ytr.mean() if len(ytr) else y.mean()))))
    out = _out(args, "scatter.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "run", "label", "prediction"])
        for i, yi, pi in zip(ds.split_indices(split), y, pred):
            w.writerow([int(i), int(ds.run[i]), repr(float(yi)), repr(float(pi))])
    _print_summary("evaluate", {"split": split, "samples": len(y),
                                "mae": float(np.mean(np.abs(pred - y))),
                                "rmse": float(math.sqrt(np.mean((pred - y) ** 2))),
                                "baseline_mae": base, "scatter": str(out)})
    return EXIT_OK


def cmd_bench(args):
    cfg = _cfg(args)
    rng = C.make_rng(cfg)
    model = C.build_model(cfg)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []

    def add(name, size, times, extra=""):
        times = np.asarray(times)
        rows.append([name, size, len(times), f"{np.median(times):.6e}",
                     f"{np.percentile(times, 90):.6e}", f"{times.max():.6e}", extra])

    t_qp, iters = X.qp_timing(model, rng, n=args.repeats)
    add("qp_filter_solve", model.nv + model.nva + 12, t_qp, f"median_iterations={np.median(iters):g}")
    add("dynamics_crba_rnea", model.nv, X.dynamics_timing(model, rng, n=args.repeats))
    for name, ws in (("attention_block", True), ("attention_block_allocating", False)):
        base = None
        for L in sizes:
            t = X.attention_timing(L, repeats=max(5, args.repeats // 10), workspace=ws)
            base = base or t
            add(name, L, [t], f"ratio_to_first={t / base:.3f}")
    out = _out(args, "bench.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["benchmark", "size", "n", "median_s", "p90_s", "max_s", "note"])
        w.writerows(rows)
    for r in rows:
        print(",".join(str(x) for x in r))
    return EXIT_OK


def cmd_schema_check(args):
    from .scenario import check_log_schema

    bad = 0
    for path in args.logs:
        if not Path(path).is_file():
            print(f"{path}: no such file")
            bad += 1
            continue
        problems = check_log_schema(path)
        if problems:
            bad += 1
            for p in problems[:20]:
                print(f"{path}: {p}")
        else:
            print(f"{path}: ok")
    return EXIT_FAILED if bad else EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="legsafe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="YAML scenario config")
        p.add_argument("--out", help=out_help)
        p.add_argument("--seed", type=int, help="seed for every random draw of the run")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted key), repeatable; wins over --config")
        return p

    common(sub.add_parser("simulate", help="one closed-loop run"), "CSV log path").set_defaults(
        func=cmd_simulate)
    common(sub.add_parser("friction-demo", help="nominal trot, then the filter at low mu"),
           "CSV log path").set_defaults(func=cmd_friction_demo)
    common(sub.add_parser("clearance-demo", help="paired runs over a clearance profile"),
           "CSV log path for the filtered run").set_defaults(func=cmd_clearance_demo)
    common(sub.add_parser("gen-data", help="synthetic friction dataset"),
           "dataset path").set_defaults(func=cmd_gen_data)
    p = common(sub.add_parser("train", help="train the friction estimator"), "checkpoint path")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--metrics", help="per-epoch metrics CSV (default next to the checkpoint)")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("evaluate", help="split MAE and a prediction scatter CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="scatter CSV path")
    p.set_defaults(func=cmd_evaluate)
    p = common(sub.add_parser("bench", help="timing microbenchmarks"), "timing CSV path")
    p.add_argument("--sizes", default="480,960", help="attention sequence lengths")
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("schema-check", help="validate CSV logs against the log schema")
    p.add_argument("logs", nargs="+")
    p.set_defaults(func=cmd_schema_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
