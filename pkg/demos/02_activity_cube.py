# From a raw event log to the hour-of-week activity cube.
#
# A small synthetic city is written to a gzip CSV, read back in chunks and
# binned by local wall-clock hour. Each (day, hour) slot holds the average
# count over the calendar days of that weekday in the window.

import gzip
import tempfile
from pathlib import Path

import numpy as np

from landuse_cdr.ingest import apply_activity_threshold, bin_events, read_events_csv
from landuse_cdr.synthcity import SynthConfig, generate_events, generate_layout, write_events_csv

cfg = SynthConfig(n_rows=15, n_cols=15, patch_size=8, seed=2)
zg = generate_layout(cfg)
print("window:", cfg.window.start, "to", cfg.window.end, "observed days per weekday:",
      cfg.window.observed_days().tolist())

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "events.csv.gz"
    write_events_csv(generate_events(zg, cfg), path)
    with gzip.open(path, "rt") as fh:
        print("".join(next(fh) for _ in range(3)))
    cube = bin_events(read_events_csv(path), zg.spec, cfg.window)

s = cube.stats
print(f"\nrows read {s.rows_read}, binned {s.binned}, unreadable {s.skipped_rows}")
print("cube shape:", cube.counts.shape)

# weekday profile of one cell, events per hour averaged over the window
i, j = 7, 7
print(f"\ncell ({i},{j}) is class {zg.labels[i, j]}; Monday hourly averages:")
print(np.round(cube.counts[i, j, 0], 2))

# total events per cell and the activity threshold
for t in (0, 2000, 3000, 4000):
    print(f"threshold {t:5d}: {apply_activity_threshold(cube, t).sum():3d} active cells")
