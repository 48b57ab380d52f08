"""Normalized and residual activity series and the 49-feature cell vectors.

Order of operations: z-score each cell over its full 168-hour week, subtract
the unweighted mean over active cells at each hour, then collapse to an
average weekday and an average weekend day.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, ConsistencyError
from .grid import ALL_CLASSES, LandUseClass, ZoningGrid
from .ingest import DAYS, HOURS, SLOTS, ActivityCube

log = logging.getLogger(__name__)

N_FEATURES = 2 * HOURS + 1
WEEKDAYS = slice(0, 5)
WEEKEND = slice(5, 7)
_ZERO_STD = 1e-12


def active_cells(active, shape=None) -> np.ndarray:
    """Normalize a boolean mask or an iterable of (i, j) pairs to a sorted (n, 2) index array."""
    arr = np.asarray(active)
    if arr.dtype == bool:
        return np.argwhere(arr)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.unique(arr.reshape(-1, 2).astype(np.int64), axis=0)
    if shape is not None and ((arr < 0).any() or (arr >= np.array(shape)).any()):
        raise ConfigError("active cell index outside grid")
    return arr


@dataclass(frozen=True)
class NormalizedSeries:
    cells: np.ndarray      # (n, 2) grid indices, row-major order
    values: np.ndarray     # (n, 168) z-scored series
    mean: np.ndarray       # (n,) weekly mean of the absolute series
    std: np.ndarray        # (n,) population std of the absolute series
    absolute: np.ndarray   # (n, 168)

    def __len__(self):
        return len(self.cells)


@dataclass(frozen=True)
class ResidualSeries:
    cells: np.ndarray
    values: np.ndarray         # (n, 168)
    spatial_mean: np.ndarray   # (168,) mean normalized activity over active cells
    normalized: NormalizedSeries

    def __len__(self):
        return len(self.cells)


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows align with ``cells``; columns are 24 weekday residuals, 24 weekend residuals, mean daily activity."""

    cells: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] != N_FEATURES:
            raise ConfigError(f"feature matrix must have {N_FEATURES} columns, got shape {X.shape}")
        if len(X) != len(self.cells):
            raise ConsistencyError("feature rows and cell index disagree in length")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64).reshape(-1, 2))

    def __len__(self):
        return len(self.cells)

    def labels_from(self, zg: ZoningGrid) -> np.ndarray:
        return zg.labels[self.cells[:, 0], self.cells[:, 1]].astype(np.int64)

    def subset(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.cells[mask], self.X[mask])


def zscore(cube: ActivityCube, active) -> NormalizedSeries:
    """Z-score each active cell's weekly series with the population standard deviation.

    Cells with (numerically) zero variance are dropped with a warning.
    """
    cells = active_cells(active, cube.spec.shape)
    series = cube.weekly()[cells[:, 0], cells[:, 1]] if len(cells) else np.zeros((0, SLOTS))
    mu = series.mean(axis=1)
    sigma = series.std(axis=1)
    flat = sigma <= _ZERO_STD * np.maximum(1.0, np.abs(mu))
    if flat.any():
        log.warning("excluding %d zero-variance cells from the active set", int(flat.sum()))
        keep = ~flat
        cells, series, mu, sigma = cells[keep], series[keep], mu[keep], sigma[keep]
    norm = (series - mu[:, None]) / sigma[:, None]
    return NormalizedSeries(cells, norm, mu, sigma, series)


def residual(ns: NormalizedSeries) -> ResidualSeries:
    """Subtract the hourly mean over all active cells from each normalized series."""
    if len(ns) == 0:
        raise ConfigError("no active cells to compute residual activity from")
    if len(ns) == 1:
        log.warning("single active cell: residual activity is identically zero")
        return ResidualSeries(ns.cells, np.zeros_like(ns.values), ns.values[0].copy(), ns)
    spatial = ns.values.mean(axis=0)
    return ResidualSeries(ns.cells, ns.values - spatial, spatial, ns)


@dataclass(frozen=True)
class ClassProfile:
    n_cells: int
    mean_abs: np.ndarray
    mean_norm: np.ndarray
    mean_res: np.ndarray


def class_average_profiles(rs: ResidualSeries, zg: ZoningGrid) -> dict:
    """Hourly means of absolute, normalized and residual series over the active cells of each class."""
    codes = zg.labels[rs.cells[:, 0], rs.cells[:, 1]]
    if (codes == 0).any():
        raise ConsistencyError(f"{int((codes == 0).sum())} active cells have no zoning label")
    out = {}
    for c in ALL_CLASSES:
        sel = codes == int(c)
        if not sel.any():
            log.info("class %s has no active cells; omitted from profiles", c.name)
            continue
        out[c] = ClassProfile(int(sel.sum()), rs.normalized.absolute[sel].mean(axis=0),
                              rs.normalized.values[sel].mean(axis=0), rs.values[sel].mean(axis=0))
    return out


def day_profiles(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average weekday and weekend-day 24-hour profiles of (n, 168) series."""
    week = series.reshape(-1, DAYS, HOURS)
    return week[:, WEEKDAYS].mean(axis=1), week[:, WEEKEND].mean(axis=1)


def build_features(cube: ActivityCube, rs: ResidualSeries, active=None) -> FeatureMatrix:
    if active is not None:
        cells = active_cells(active, cube.spec.shape)
        if not np.array_equal(cells, rs.cells):
            raise ConsistencyError("active set differs from the cells of the residual series")
    weekday, weekend = day_profiles(rs.values)
    absolute = cube.weekly()[rs.cells[:, 0], rs.cells[:, 1]]
    daily = absolute.sum(axis=1) / DAYS
    return FeatureMatrix(rs.cells, np.column_stack([weekday, weekend, daily]))


def compute_features(cube: ActivityCube, active):
    """zscore -> residual -> build_features in one call."""
    ns = zscore(cube, active)
    rs = residual(ns)
    return build_features(cube, rs), rs


# -- I/O ---------------------------------------------------------------------

FEATURE_COLUMNS = [f"f{k:02d}" for k in range(1, N_FEATURES + 1)]
RESIDUAL_COLUMNS = [f"r{k:03d}" for k in range(SLOTS)]


def _write_matrix(path, cells, values, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", *columns])
        for (i, j), row in zip(cells.tolist(), values.tolist()):
            w.writerow([i, j, *map(repr, row)])


def _read_matrix(path, columns):
    df = pd.read_csv(path, float_precision="round_trip")
    return df[["row", "col"]].to_numpy(dtype=np.int64), df[columns].to_numpy(dtype=float)


def write_features(fm: FeatureMatrix, path):
    _write_matrix(path, fm.cells, fm.X, FEATURE_COLUMNS)


def read_features(path) -> FeatureMatrix:
    return FeatureMatrix(*_read_matrix(path, FEATURE_COLUMNS))


def write_residuals(rs: ResidualSeries, path):
    _write_matrix(path, rs.cells, rs.values, RESIDUAL_COLUMNS)


def read_residual_values(path) -> tuple[np.ndarray, np.ndarray]:
    """(cells, values) from a residual CSV; enough for error-group analysis."""
    return _read_matrix(path, RESIDUAL_COLUMNS)


def write_class_profiles(profiles: dict, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "hour_of_week", "mean_abs", "mean_norm", "mean_res"])
        for c, p in sorted(profiles.items()):
            for t in range(SLOTS):
                w.writerow([c.name.lower(), t, repr(float(p.mean_abs[t])),
                            repr(float(p.mean_norm[t])), repr(float(p.mean_res[t]))])
