# The whole chain on the default synthetic city, in memory.
#
# 100 x 100 cells with the reference zoning mix, three weeks of events,
# 500 trees, 5-fold CV with tuned vote weights, then the second pass.
# Takes about half a minute.

import numpy as np

from landuse_cdr.evaluate import GROUPS
from landuse_cdr.pipeline import run_synthetic
from landuse_cdr.rforest import ForestConfig
from landuse_cdr.synthcity import SynthConfig

res = run_synthetic(SynthConfig(), ForestConfig(n_trees=500, master_seed=0, threads=0))
print("timings (s):", {k: round(v, 1) for k, v in res.timings.items()})
print(res.report_raw.to_text("Classifier output"))
print(res.report_smoothed.to_text("After second pass"))
print(f"All-Residential baseline accuracy: {res.baseline:.4f}")

eg = res.groups
print(f"\nerror groups for {eg.focal.name}:", eg.counts)
for g in GROUPS:
    if eg.profiles[g] is not None:
        wd = eg.profiles[g].reshape(7, 24)[:5].mean(axis=0)
        print(f"  group {g:3s} mean weekday residual at 03h {wd[3]:+.2f}, 13h {wd[13]:+.2f}, 21h {wd[21]:+.2f}")

# This city is easy for the forest, so groups II and III are usually empty here;
# 04_forest_and_weights.py builds a harder one.
