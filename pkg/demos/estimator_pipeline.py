"""Generate a small friction dataset, train the estimator, then let its
online estimate drive the filter's mu on low-friction ground.

This is a scaled-down version of the full pipeline (``legsafe gen-data``,
``legsafe train``, ``legsafe simulate --set filter.mu_source=estimator``) so
that it finishes in about a minute and a half.  With only 24 runs the test
split holds few distinct friction values, so its MAE is a rough number.
"""
import sys
from pathlib import Path

import numpy as np

from legsafe import config as C
from legsafe import experiments as X
from legsafe.estimator import (Estimator, EstimatorConfig, TrainConfig, generate_synthetic_dataset,
                               save_checkpoint, train)

workdir = Path(sys.argv[1] if len(sys.argv) > 1 else "estimator_demo")
workdir.mkdir(exist_ok=True)

ds = generate_synthetic_dataset(96, (0.2, 1.0), seed=0, run_duration=2.0, body_velocity=0.3)
x_tr, y_tr = ds.split("train")
x_te, y_te = ds.split("test")
print(f"dataset: {len(ds)} windows, {int(ds.run.max()) + 1} runs")

model = Estimator.create(EstimatorConfig(n_steps=ds.features.shape[1],
                                         n_joints=ds.features.shape[2] // 3), seed=0)
train(model, ds, TrainConfig(epochs=10, batch_size=16, lr=2e-3), log=print)
pred = model.predict(x_te)
print(f"test MAE {np.mean(np.abs(pred - y_te)):.4f}  "
      f"(predict-the-mean baseline {np.mean(np.abs(y_te - y_tr.mean())):.4f})")
ckpt = workdir / "model.bin"
save_checkpoint(ckpt, model)

# low-friction ground, filter starts with an optimistic mu and follows the estimate
cfg = C.load_config(overrides=[
    "duration=3.0", "terrain.mu_true=0.3", "filter.mu=0.8", "filter.start=1.0",
    "filter.mu_source=estimator", f"filter.estimator={ckpt}",
    "gait.body_velocity_target=0.3"])
log = X.simulate(cfg)
log.to_csv(workdir / "online.csv")
mu = log.column("mu")
t = log.column("t")
for tq in (1.0, 1.5, 2.0, 2.5, 2.99):
    i = min(np.searchsorted(t, tq), len(t) - 1)
    print(f"t = {t[i]:.2f} s  filter mu = {mu[i]:.3f}")
