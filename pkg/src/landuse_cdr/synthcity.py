"""Synthetic city: a zoning layout plus a phone-event stream with class-specific weekly rhythms.

Count model
-----------
For each cell, calendar day and hour the expected count is
``lam = profile[class][weekday, hour] * gradient(cell)``.

``count_model="poisson"`` draws ``Poisson(lam * G)`` where ``G`` is a gamma
multiplier with mean 1 and variance ``noise`` (``noise=0`` means ``G = 1``),
so the variance is ``lam + noise * lam**2``.

``count_model="exact"`` is deterministic: the ``n`` occurrences of a
weekday/hour slot receive ``round(lam * n)`` events in total, spread as evenly
as possible (earlier dates get the extra event). Averages then equal ``lam``
exactly whenever ``lam * n`` is an integer, e.g. for integral profiles.

Events are placed uniformly inside their cell and hour.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np
import pandas as pd

from .errors import ConfigError
from .grid import ALL_CLASSES, GridSpec, LandUseClass, ZoningGrid, ZoningPolygon
from .ingest import DAYS, HOURS, EventBatch, Window, format_timestamps

log = logging.getLogger(__name__)

# Zoning-map cell counts per category for a large US city; the default class mix
ZONING_COUNTS = {LandUseClass.RESIDENTIAL: 23322, LandUseClass.COMMERCIAL: 1854,
                 LandUseClass.INDUSTRIAL: 2236, LandUseClass.PARKS: 1941, LandUseClass.OTHER: 2045}
ZONING_SHARES = {c: n / sum(ZONING_COUNTS.values()) for c, n in ZONING_COUNTS.items()}

DEFAULT_START = date(2012, 1, 9)

# Weekday hours where the default Residential profile runs above / below the city rhythm.
RESIDENTIAL_PEAK_HOURS = (19, 20, 21, 22, 23)
RESIDENTIAL_TROUGH_HOURS = (10, 11, 12, 13, 14, 15, 16)


def _week(weekday, weekend, saturday=None, sunday=None, friday=None):
    prof = np.empty((DAYS, HOURS))
    prof[:5] = weekday
    if friday is not None:
        prof[4] = friday
    prof[5] = weekend if saturday is None else saturday
    prof[6] = weekend if sunday is None else sunday
    return prof


def _hours(default, **spans):
    # spans: "h0_h1" -> value for hours h0..h1 inclusive
    out = np.full(HOURS, float(default))
    for key, v in spans.items():
        a, b = (int(s) for s in key.strip("h").split("_"))
        out[a:b + 1] = v
    return out


def default_profiles() -> dict:
    """Integral events/hour per class, shape (7, 24), Monday first."""
    city_wd = _hours(1.0, h0_5=0.3, h6_6=0.6, h7_8=0.9, h18_21=1.1, h22_23=0.7)
    city_we = _hours(1.0, h0_2=0.5, h3_8=0.3, h9_11=0.7, h21_23=0.8)
    city = _week(city_wd, city_we)

    res = _week(_hours(1.0, h0_6=1.3, h10_16=0.6, h19_23=1.5),
                _hours(1.0, h19_23=1.3))
    com = _week(_hours(1.0, h0_6=0.5, h9_17=1.8, h19_23=0.5),
                _hours(0.7, h12_17=1.2))
    ind = _week(_hours(0.6, h6_15=1.5, h16_23=0.7),
                _hours(0.6))
    prk = _week(_hours(1.0, h17_19=1.3),
                _hours(1.0, h11_18=2.0))
    oth_we = _hours(1.0, h0_3=3.0)
    oth = _week(_hours(1.0, h18_23=1.3), oth_we,
                friday=_hours(1.0, h18_21=1.3, h22_23=1.6))
    levels = {LandUseClass.RESIDENTIAL: 4.0, LandUseClass.COMMERCIAL: 5.0,
              LandUseClass.INDUSTRIAL: 4.0, LandUseClass.PARKS: 3.0, LandUseClass.OTHER: 5.0}
    shapes = {LandUseClass.RESIDENTIAL: res, LandUseClass.COMMERCIAL: com,
              LandUseClass.INDUSTRIAL: ind, LandUseClass.PARKS: prk, LandUseClass.OTHER: oth}
    return {c: np.maximum(np.rint(levels[c] * city * shapes[c]), 0.0) for c in ALL_CLASSES}


@dataclass
class SynthConfig:
    n_rows: int = 100
    n_cols: int = 100
    cell_size: float = 200.0
    origin_x: float = 0.0
    origin_y: float = 0.0
    shares: dict = field(default_factory=lambda: dict(ZONING_SHARES))
    patch_size: float = 30.0
    profiles: dict = field(default_factory=default_profiles)
    gradient: float = 2.0
    noise: float = 0.1
    count_model: str = "poisson"
    start: date = DEFAULT_START
    n_weeks: int = 3
    utc_offset: str = "-05:00"
    seed: int = 0

    def __post_init__(self):
        try:
            self.shares = {LandUseClass.parse(c): float(v) for c, v in self.shares.items()}
            self.profiles = {LandUseClass.parse(c): np.asarray(v, dtype=float).reshape(DAYS, HOURS)
                             for c, v in self.profiles.items()}
        except ValueError as exc:
            raise ConfigError(f"synthetic city: {exc}") from None
        if any(v < 0 for v in self.shares.values()):
            raise ConfigError("class shares must be non-negative")
        if abs(sum(self.shares.values()) - 1.0) > 1e-9:
            raise ConfigError(f"class shares sum to {sum(self.shares.values())}, expected 1")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be at least 1")
        if any((p < 0).any() for p in self.profiles.values()):
            raise ConfigError("profile intensities must be non-negative")
        if self.gradient <= 0 or self.noise < 0:
            raise ConfigError("gradient must be positive and noise non-negative")
        if self.count_model not in ("poisson", "exact"):
            raise ConfigError("count_model must be 'poisson' or 'exact'")
        self.grid  # validates dimensions

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.origin_x, self.origin_y, self.n_rows, self.n_cols, self.cell_size)

    @property
    def window(self) -> Window:
        return Window.weeks(self.start, self.n_weeks)

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows, "n_cols": self.n_cols, "cell_size": self.cell_size,
            "origin_x": self.origin_x, "origin_y": self.origin_y,
            "shares": {c.name.lower(): v for c, v in sorted(self.shares.items())},
            "patch_size": self.patch_size,
            "profiles": {c.name.lower(): v.tolist() for c, v in sorted(self.profiles.items())},
            "gradient": self.gradient, "noise": self.noise, "count_model": self.count_model,
            "start": self.start.isoformat(), "n_weeks": self.n_weeks,
            "utc_offset": self.utc_offset, "seed": self.seed,
        }


def target_counts(shares: dict, n_cells: int) -> dict:
    """Largest-remainder apportionment of ``n_cells`` by class share; ties favour lower codes."""
    classes = [c for c in ALL_CLASSES if shares.get(c, 0.0) > 0]
    if len(classes) > n_cells:
        raise ConfigError(f"{len(classes)} classes cannot share {n_cells} cells")
    quota = {c: shares[c] * n_cells for c in classes}
    counts = {c: int(np.floor(q)) for c, q in quota.items()}
    left = n_cells - sum(counts.values())
    for c in sorted(classes, key=lambda c: (-(quota[c] - counts[c]), int(c)))[:left]:
        counts[c] += 1
    return counts


def generate_layout(cfg: SynthConfig) -> ZoningGrid:
    """Grow compact patches for every class except the most common one, which fills the rest."""
    spec = cfg.grid
    counts = target_counts(cfg.shares, spec.n_cells)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    background = max(counts, key=lambda c: (counts[c], -int(c)))
    labels = np.zeros(spec.shape, dtype=np.int8)
    rows, cols = spec.shape
    lo, hi = max(1, int(round(cfg.patch_size / 2))), max(1, int(round(1.5 * cfg.patch_size)))

    for c in sorted(counts):
        if c == background:
            continue
        need = counts[c]
        while need > 0:
            free = np.flatnonzero(labels.ravel() == 0)
            start = int(free[rng.integers(len(free))])
            size = min(need, int(rng.integers(lo, hi + 1)))
            patch = _grow_patch(labels, divmod(start, cols), size, rng)
            for i, j in patch:
                labels[i, j] = int(c)
            need -= len(patch)
    labels[labels == 0] = int(background)
    return ZoningGrid(spec, labels)


def _grow_patch(labels, seed_cell, size, rng):
    rows, cols = labels.shape
    patch = [seed_cell]
    member = {seed_cell}
    frontier = {}

    def touch(cell):
        i, j = cell
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            a, b = i + di, j + dj
            if 0 <= a < rows and 0 <= b < cols and labels[a, b] == 0 and (a, b) not in member:
                frontier[(a, b)] = frontier.get((a, b), 0) + 1

    touch(seed_cell)
    while len(patch) < size and frontier:
        # favour cells with the most patch neighbours to keep patches compact
        ordered = sorted(frontier)
        top = max(frontier.values())
        best = [cell for cell in ordered if frontier[cell] == top]
        cell = best[int(rng.integers(len(best)))]
        del frontier[cell]
        member.add(cell)
        patch.append(cell)
        touch(cell)
    return patch


def density_gradient(cfg: SynthConfig) -> np.ndarray:
    """Intensity multiplier per cell: ``gradient`` at the grid centre falling linearly to 1 at the corners."""
    rows, cols = cfg.n_rows, cfg.n_cols
    i, j = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    d = np.hypot(i - rows / 2, j - cols / 2)
    dmax = max(float(np.hypot(rows / 2, cols / 2)), 1e-12)
    return 1.0 + (cfg.gradient - 1.0) * (1.0 - d / dmax)


def expected_intensity(zg: ZoningGrid, cfg: SynthConfig) -> np.ndarray:
    """Expected average count per cell and weekly slot, shape (rows, cols, 7, 24)."""
    out = np.zeros((*zg.spec.shape, DAYS, HOURS))
    grad = density_gradient(cfg)
    for c, prof in cfg.profiles.items():
        sel = zg.labels == int(c)
        out[sel] = prof[None] * grad[sel][:, None, None]
    return out


def _exact_counts(lam, n_occ):
    # lam: (cells, 7, 24); returns (cells, n_occ, 7, 24) spreading round(lam*n) evenly
    total = np.rint(lam * n_occ).astype(np.int64)
    base, extra = np.divmod(total, n_occ)
    k = np.arange(n_occ)[None, :, None, None]
    return base[:, None] + (k < extra[:, None]).astype(np.int64)


def generate_events(zg: ZoningGrid, cfg: SynthConfig, window: Window | None = None):
    """Yield one EventBatch per grid row, cells in row-major order and events time-sorted within each cell."""
    window = window or cfg.window
    spec = zg.spec
    lam_all = expected_intensity(zg, cfg)
    days = np.array([window.start + timedelta(days=k) for k in range(window.n_days)], dtype="datetime64[D]")
    dow = np.array([(window.start + timedelta(days=k)).weekday() for k in range(window.n_days)])
    missing = [c for c in np.unique(zg.labels[zg.labeled]) if LandUseClass(int(c)) not in cfg.profiles]
    if missing:
        raise ConfigError(f"no activity profile for classes {missing}")
    for i in range(spec.n_rows):
        lam = lam_all[i]                       # (cols, 7, 24)
        per_day = lam[:, dow, :]               # (cols, n_days, 24)
        n_cols = spec.n_cols
        counts = np.empty((n_cols, window.n_days, HOURS), dtype=np.int64)
        for j in range(n_cols):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 2, i, j])))
            if cfg.count_model == "exact":
                n_occ = np.bincount(dow, minlength=DAYS)
                c = np.zeros((window.n_days, HOURS), dtype=np.int64)
                for d in range(DAYS):
                    idx = np.flatnonzero(dow == d)
                    if len(idx):
                        c[idx] = _exact_counts(lam[j][None, d:d + 1], n_occ[d])[0, :, 0]
                counts[j] = c
            else:
                mu = per_day[j]
                if cfg.noise > 0:
                    mu = mu * rng.gamma(1.0 / cfg.noise, cfg.noise, size=mu.shape)
                counts[j] = rng.poisson(mu)
        n = counts.reshape(n_cols, -1).sum(axis=1)
        if n.sum() == 0:
            yield EventBatch(np.zeros(0, dtype="datetime64[s]"), np.zeros(0), np.zeros(0))
            continue
        xs, ys, ts = [], [], []
        for j in range(n_cols):
            if n[j] == 0:
                continue
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 3, i, j])))
            flat = counts[j].ravel()
            slot = np.repeat(np.arange(flat.size), flat)
            secs = rng.integers(0, 3600, size=slot.size)
            order = np.lexsort((secs, slot))
            slot, secs = slot[order], secs[order]
            day_idx, hour = np.divmod(slot, HOURS)
            t = days[day_idx].astype("datetime64[s]") + (hour * 3600 + secs).astype("timedelta64[s]")
            x0, y0 = float(spec.x_edge(j)), float(spec.y_edge(i))
            xs.append(x0 + rng.random(slot.size) * spec.cell_size)
            ys.append(y0 + rng.random(slot.size) * spec.cell_size)
            ts.append(t)
        yield EventBatch(np.concatenate(ts), np.concatenate(xs), np.concatenate(ys))


def layout_polygons(zg: ZoningGrid) -> list[ZoningPolygon]:
    """One rectangle per horizontal run of equal labels; rasterizes back to ``zg`` exactly."""
    spec = zg.spec
    polys = []
    for i in range(spec.n_rows):
        row = zg.labels[i]
        j = 0
        while j < spec.n_cols:
            code = int(row[j])
            k = j
            while k + 1 < spec.n_cols and row[k + 1] == code:
                k += 1
            if code:
                x0, x1 = float(spec.x_edge(j)), float(spec.x_edge(k + 1))
                y0, y1 = float(spec.y_edge(i)), float(spec.y_edge(i + 1))
                ring = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
                polys.append(ZoningPolygon(ring, LandUseClass(code)))
            j = k + 1
    return polys


# Fixed mtime keeps compressed output byte-identical across runs.
_GZIP = {"method": "gzip", "mtime": 0, "compresslevel": 1}


def write_events_csv(batches, path, utc_offset: str = "-05:00"):
    """Write batches as ``timestamp,x,y``; a ``.gz`` suffix compresses."""
    first = True
    for batch in batches:
        df = pd.DataFrame({"timestamp": format_timestamps(batch.local, utc_offset),
                           "x": batch.x, "y": batch.y})
        df.to_csv(path, mode="w" if first else "a", header=first, index=False,
                  compression=_GZIP if str(path).endswith(".gz") else None)
        first = False
    if first:
        with open(path, "w") as fh:
            fh.write("timestamp,x,y\n")


def write_config(cfg: SynthConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
