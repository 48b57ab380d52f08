"""Flat ``key = value`` pipeline configuration with typed, namespaced keys.

Example file::

    # comments start with '#'
    seed = 7
    grid.n_rows = 50
    forest.n_trees = 200
    forest.weight_grid.commercial = 1, 2, 4

Command-line overrides (``--set key=value``) take precedence over the file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

from .errors import ConfigError
from .grid import ALL_CLASSES, GridSpec, LandUseClass
from .ingest import DEFAULT_MIN_TOTAL_EVENTS, Window
from .rforest import OBJECTIVES, ForestConfig, default_weight_grid
from .synthcity import DEFAULT_START, SynthConfig


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    vals = tuple(float(v) for v in str(text).replace(",", " ").split())
    if not vals:
        raise ValueError("empty list")
    return vals


def _classes(text):
    return tuple(sorted(int(LandUseClass.parse(v)) for v in str(text).replace(",", " ").split()))


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text
    return parse


SCHEMA = {
    "seed": (int, 0),
    "threads": (int, 1),
    "grid.origin_x": (float, 0.0),
    "grid.origin_y": (float, 0.0),
    "grid.n_rows": (int, 100),
    "grid.n_cols": (int, 100),
    "grid.cell_size": (float, 200.0),
    "rasterize.min_coverage": (float, 0.0),
    "ingest.window_start": (date.fromisoformat, DEFAULT_START),
    "ingest.window_end": (date.fromisoformat, None),   # default: start + synth.n_weeks weeks
    "ingest.min_total_events": (int, DEFAULT_MIN_TOTAL_EVENTS),
    "forest.n_trees": (int, 500),
    "forest.mtry": (int, 7),
    "forest.min_leaf": (int, 5),
    "forest.k_folds": (int, 5),
    "forest.objective": (_choice(*OBJECTIVES), "nonres_macro_recall"),
    "forest.tune": (_bool, True),
    "forest.weights": (_floats, None),
    "forest.classes": (_classes, tuple(int(c) for c in ALL_CLASSES)),
    "predict.source": (_choice("oof", "forest"), "oof"),
    "smooth.iterate": (_bool, False),
    "evaluate.focal": (lambda t: LandUseClass.parse(t), LandUseClass.RESIDENTIAL),
    "synth.patch_size": (float, 30.0),
    "synth.gradient": (float, 2.0),
    "synth.noise": (float, 0.1),
    "synth.count_model": (_choice("poisson", "exact"), "poisson"),
    "synth.n_weeks": (int, 3),
    "synth.utc_offset": (str, "-05:00"),
    "paths.workdir": (str, "."),
    "paths.zoning": (str, "zoning.geojson"),
    "paths.events": (str, "events.csv.gz"),
}
for _c, _cands in default_weight_grid().items():
    SCHEMA[f"forest.weight_grid.{_c.name.lower()}"] = (_floats, tuple(_cands))

# Artifacts written inside paths.workdir.
ARTIFACTS = {
    "truth": "truth.csv",
    "synth_config": "synth_config.json",
    "zoning_grid": "zoning_grid.csv",
    "cube": "cube.csv",
    "cube_meta": "cube.meta.json",
    "features": "features.csv",
    "residuals": "residuals.csv",
    "class_profiles": "class_profiles.csv",
    "forest": "forest.json",
    "cv_votes": "cv_votes.csv",
    "predictions": "predictions.csv",
    "smoothed": "smoothed.csv",
    "report_text": "report.txt",
    "report_json": "report.json",
    "error_groups": "error_groups.csv",
}


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[pipeline]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["pipeline"])


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


@dataclass
class PipelineConfig:
    values: dict

    @classmethod
    def build(cls, raw: dict | None = None) -> "PipelineConfig":
        raw = raw or {}
        errors = []
        values = {k: default for k, (_, default) in SCHEMA.items()}
        for k, text in raw.items():
            if k not in SCHEMA:
                errors.append(f"{k}: unknown key")
                continue
            try:
                values[k] = SCHEMA[k][0](text)
            except (ValueError, TypeError) as exc:
                errors.append(f"{k}: {exc}")
        cfg = cls(values)
        if not errors:
            try:
                cfg.grid, cfg.window, cfg.forest_config()
            except ConfigError as exc:
                errors.append(str(exc))
        if values["ingest.min_total_events"] < 0:
            errors.append("ingest.min_total_events: must be >= 0")
        if not 0.0 <= values["rasterize.min_coverage"] <= 1.0:
            errors.append("rasterize.min_coverage: must lie in [0, 1]")
        if errors:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    @property
    def grid(self) -> GridSpec:
        v = self.values
        return GridSpec(v["grid.origin_x"], v["grid.origin_y"], v["grid.n_rows"], v["grid.n_cols"],
                        v["grid.cell_size"])

    @property
    def window(self) -> Window:
        v = self.values
        end = v["ingest.window_end"] or v["ingest.window_start"] + timedelta(weeks=v["synth.n_weeks"])
        return Window(v["ingest.window_start"], end)

    @property
    def workdir(self) -> Path:
        return Path(self.values["paths.workdir"])

    def path(self, name: str) -> Path:
        if name in ("zoning", "events"):
            p = Path(self.values[f"paths.{name}"])
            return p if p.is_absolute() else self.workdir / p
        return self.workdir / ARTIFACTS[name]

    def weight_grid(self) -> dict:
        return {c: self.values[f"forest.weight_grid.{c.name.lower()}"] for c in ALL_CLASSES}

    def forest_config(self) -> ForestConfig:
        v = self.values
        return ForestConfig(n_trees=v["forest.n_trees"], mtry=v["forest.mtry"], min_leaf=v["forest.min_leaf"],
                            k_folds=v["forest.k_folds"], master_seed=v["seed"], threads=v["threads"],
                            objective=v["forest.objective"], weight_grid=self.weight_grid())

    def synth_config(self) -> SynthConfig:
        v = self.values
        return SynthConfig(n_rows=v["grid.n_rows"], n_cols=v["grid.n_cols"], cell_size=v["grid.cell_size"],
                           origin_x=v["grid.origin_x"], origin_y=v["grid.origin_y"],
                           patch_size=v["synth.patch_size"], gradient=v["synth.gradient"],
                           noise=v["synth.noise"], count_model=v["synth.count_model"],
                           start=v["ingest.window_start"], n_weeks=v["synth.n_weeks"],
                           utc_offset=v["synth.utc_offset"], seed=v["seed"])

    def to_dict(self) -> dict:
        out = {}
        for k, val in sorted(self.values.items()):
            if isinstance(val, date):
                val = val.isoformat()
            elif isinstance(val, LandUseClass):
                val = val.name.lower()
            elif isinstance(val, tuple):
                val = list(val)
            out[k] = val
        return out
