"""Trot nominally on mu = 0.8 ground, then switch the filter on with mu = 0.2.

Prints the lateral force statistics before and after activation and writes the
log to ``friction.csv`` (or the path given as the first argument).
"""
import sys

from legsafe import config as C
from legsafe import experiments as X

out = sys.argv[1] if len(sys.argv) > 1 else "friction.csv"
cfg = C.load_config(preset=X.FRICTION_PRESET)
log, summary = X.friction_demo(cfg)
log.to_csv(out)

print("lateral force, mean over stance samples (N)")
print(f"  nominal  : {summary['pre_lateral_mean_true']:.2f}")
print(f"  filtered : {summary['post_lateral_mean_true']:.2f}")
print(f"samples over the mu=0.2 cone by >10% before activation: "
      f"{summary['pre_loaded_samples_over_10pct']}")
print(f"max cone violation after activation: {summary['post_max_cone_violation']:.2e}")
print(f"log -> {out}")
