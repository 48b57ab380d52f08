"""In-memory orchestration shared by the command line and the demos.

Each helper takes already-loaded objects and returns new ones; file handling
lives in :mod:`landuse_cdr.cli`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError
from .evaluate import ConfusionReport, ErrorGroupProfiles, confusion, error_groups, naive_baseline
from .grid import ALL_CLASSES, LandUseClass, ZoningGrid
from .ingest import DEFAULT_MIN_TOTAL_EVENTS, ActivityCube, apply_activity_threshold, bin_events
from .postprocess import PredictionGrid, second_pass
from .rforest import CVResult, Forest, ForestConfig, cross_validate, fit_forest, search_weights
from .signal import FeatureMatrix, ResidualSeries, compute_features
from .synthcity import SynthConfig, generate_events, generate_layout

log = logging.getLogger(__name__)


def select_active(cube: ActivityCube, zg: ZoningGrid, min_total_events=DEFAULT_MIN_TOTAL_EVENTS) -> np.ndarray:
    """Cells above the activity threshold that also carry a zoning label."""
    if cube.spec != zg.spec:
        raise ConsistencyError("activity cube and zoning grid use different grids")
    mask = apply_activity_threshold(cube, min_total_events)
    dropped = int((mask & ~zg.labeled).sum())
    if dropped:
        log.info("%d active cells have no zoning label and are left out", dropped)
    return mask & zg.labeled


def restrict_classes(fm: FeatureMatrix, zg: ZoningGrid, classes=ALL_CLASSES) -> FeatureMatrix:
    codes = fm.labels_from(zg)
    keep = np.isin(codes, [int(c) for c in classes])
    return fm if keep.all() else fm.subset(keep)


@dataclass
class Classification:
    cv: CVResult
    weights: np.ndarray
    forest: Forest | None = None
    search_score: float | None = None

    def oof_grid(self, spec) -> PredictionGrid:
        return PredictionGrid.from_cells(spec, self.cv.cells, self.cv.predict(self.weights))


def classify(fm: FeatureMatrix, zg: ZoningGrid, cfg: ForestConfig, tune: bool = True, weights=None,
             fit_full: bool = True) -> Classification:
    """Cross-validate, pick vote weights and optionally grow the forest on every row."""
    cv = cross_validate(fm, zg, cfg)
    score = None
    if tune:
        ws = search_weights(cv, cfg.weight_grid, cfg.objective)
        w, score = ws.weights, ws.score
        log.info("tuned weights %s (objective %.4f)", w.tolist(), score)
    elif weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(cv.classes),):
            raise ConfigError(f"expected {len(cv.classes)} weights, got {w.size}")
    else:
        w = np.ones(len(cv.classes))
    forest = fit_forest(fm.X, cv.truth, cfg, stream=0, classes=cv.classes).with_weights(w) if fit_full else None
    return Classification(cv, w, forest, score)


@dataclass
class RunResult:
    truth: ZoningGrid
    cube: ActivityCube
    features: FeatureMatrix
    residuals: ResidualSeries
    classification: Classification
    raw: PredictionGrid
    smoothed: PredictionGrid
    report_raw: ConfusionReport
    report_smoothed: ConfusionReport
    groups: ErrorGroupProfiles
    baseline: float
    timings: dict = field(default_factory=dict)


def run_synthetic(synth: SynthConfig | None = None, forest_cfg: ForestConfig | None = None,
                  min_total_events=DEFAULT_MIN_TOTAL_EVENTS, tune: bool = True, iterate: bool = False,
                  focal=LandUseClass.RESIDENTIAL, fit_full: bool = False) -> RunResult:
    """Generate a city and push it through every stage, predicting each cell out-of-fold."""
    synth = synth or SynthConfig()
    forest_cfg = forest_cfg or ForestConfig(master_seed=synth.seed)
    t = {}
    t0 = time.perf_counter()
    truth = generate_layout(synth)
    cube = bin_events(generate_events(truth, synth), truth.spec, synth.window)
    t["synth_ingest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    active = select_active(cube, truth, min_total_events)
    fm, rs = compute_features(cube, active)
    t["features"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    cl = classify(fm, truth, forest_cfg, tune=tune, fit_full=fit_full)
    t["forest"] = time.perf_counter() - t0

    raw = cl.oof_grid(truth.spec)
    smoothed = second_pass(raw, iterate=iterate)
    rep_raw = confusion(truth, raw, cl.cv.classes, cl.weights)
    rep_smooth = confusion(truth, smoothed, cl.cv.classes, cl.weights)
    groups = error_groups(truth, raw, rs, focal)
    baseline = naive_baseline(truth, raw.active)
    return RunResult(truth, cube, fm, rs, cl, raw, smoothed, rep_raw, rep_smooth, groups, baseline, t)
