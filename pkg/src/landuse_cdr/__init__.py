"""Land-use classification of grid cells from aggregated mobile-phone activity."""

__version__ = "0.1.0"

from .errors import ConfigError, ConsistencyError, GeometryError, IngestError, LandUseError
from .grid import (ALL_CLASSES, GridSpec, LandUseClass, ZoningGrid, ZoningPolygon, class_shares,
                   coverage_fractions, load_geojson, neighbors8, rasterize_zoning)
from .ingest import (ActivityCube, ActivityEvent, EventBatch, Window, apply_activity_threshold,
                     bin_events, read_events_csv)
from .signal import (FeatureMatrix, NormalizedSeries, ResidualSeries, build_features,
                     class_average_profiles, compute_features, residual, zscore)
from .rforest import (CVResult, Forest, ForestConfig, VoteTally, cross_validate, predict,
                      search_weights, stratified_folds, train_forest, train_tree, tune_weights)
from .postprocess import PredictionGrid, second_pass
from .evaluate import ConfusionReport, ErrorGroupProfiles, confusion, error_groups, naive_baseline
from .synthcity import SynthConfig, generate_events, generate_layout
from .pipeline import classify, run_synthetic

__all__ = [name for name in dir() if not name.startswith("_")]
