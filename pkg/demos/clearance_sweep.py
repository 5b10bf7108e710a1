"""Sweep the clearance profile height and barrier gain over a small grid.

For every (height, alpha) pair, a filtered and a nominal run are compared on
minimum foot clearance.  The guarantee is documented for heights in
[0.05, 0.11] m and gains in [15, 35]; the grid reaches a little past both
ends so the edge of the envelope is visible.
"""
import numpy as np

from legsafe import config as C
from legsafe import experiments as X

heights = [0.05, 0.08, 0.11, 0.13]
alphas = [10.0, 20.0, 35.0]

print(f"{'height':>7} {'alpha':>6} {'min h nominal':>14} {'min h filtered':>15} {'non-optimal':>12}")
for h in heights:
    for a in alphas:
        cfg = C.load_config(preset=X.CLEARANCE_PRESET, overrides=[
            "duration=1.8", f"filter.obstacle_height={h}",
            f"filter.alpha1={a}", f"filter.alpha2={a}"])
        _, _, s = X.clearance_demo(cfg)
        print(f"{h:7.3f} {a:6.1f} {s['min_h_nominal']:14.4f} {s['min_h_filtered']:15.4f} "
              f"{s['non_optimal_steps']:12d}")
