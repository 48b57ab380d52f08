# Normalized and residual activity, and the 49 features.
#
# z-scoring removes each cell's volume, so a busy downtown cell and a quiet
# suburban one with the same rhythm look alike. Subtracting the city-wide
# mean at every hour leaves what is peculiar to each cell.

import numpy as np

from landuse_cdr.grid import LandUseClass
from landuse_cdr.ingest import bin_events
from landuse_cdr.pipeline import select_active
from landuse_cdr.signal import class_average_profiles, compute_features
from landuse_cdr.synthcity import SynthConfig, generate_events, generate_layout

cfg = SynthConfig(n_rows=40, n_cols=40, seed=4)
zg = generate_layout(cfg)
cube = bin_events(generate_events(zg, cfg), zg.spec, cfg.window)
active = select_active(cube, zg, min_total_events=50)
fm, rs = compute_features(cube, active)
print(f"{len(fm)} active cells, feature matrix {fm.X.shape}")

# residuals sum to zero over cells at every hour
print("max |sum over cells| of residuals:", float(np.abs(rs.values.sum(axis=0)).max()))

prof = class_average_profiles(rs, zg)
hours = [2, 6, 10, 13, 16, 19, 22]
print("\nmean weekday residual by class (rows) at hours", hours)
for c, p in prof.items():
    wd = p.mean_res.reshape(7, 24)[:5].mean(axis=0)
    print(f"{c.name:12s} n={p.n_cells:4d} ", " ".join(f"{v:+.2f}" for v in wd[hours]))

# Residential and Commercial run opposite to each other through the day
r = prof[LandUseClass.RESIDENTIAL].mean_res
c = prof[LandUseClass.COMMERCIAL].mean_res
print("\ncorrelation of Residential and Commercial residual profiles:", round(float(np.corrcoef(r, c)[0, 1]), 3))

# feature 49 carries the volume that z-scoring removed
for c, name in ((LandUseClass.RESIDENTIAL, "Res"), (LandUseClass.PARKS, "Prk")):
    rows = fm.labels_from(zg) == int(c)
    print(f"{name}: mean daily events (feature 49) {fm.X[rows, 48].mean():.1f}")
