"""Command-line driver: one subcommand per pipeline stage plus ``pipeline``.

Every stage reads declared inputs from the work directory, writes its outputs
and a ``<stage>.manifest.json`` with content hashes, the effective
configuration, seed and library versions. Nothing time-dependent is written,
so re-running a stage on unchanged inputs reproduces its files byte for byte.

Exit codes: 0 success, 1 usage error, 2 missing input, 3 invalid
configuration, 4 inconsistent or unusable inputs (grid mismatch, unlabeled
cells, invalid polygons, unreadable event logs).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import PipelineConfig, parse_overrides, read_config_file
from .errors import ConfigError, ConsistencyError, LandUseError
from .evaluate import confusion, error_groups, naive_baseline, write_error_groups
from .grid import LandUseClass, load_geojson, rasterize_zoning, read_zoning_csv, write_zoning_csv
from .grid import polygons_to_geojson
from .ingest import bin_events, read_cube, read_events_csv, write_cube
from .pipeline import classify, restrict_classes, select_active
from .postprocess import read_predictions, second_pass, write_predictions, PredictionGrid
from .rforest import CVResult, Forest
from .signal import (class_average_profiles, compute_features, read_features, read_residual_values,
                     write_class_profiles, write_features, write_residuals)
from .synthcity import generate_events, generate_layout, layout_polygons, write_config, write_events_csv

log = logging.getLogger("landuse_cdr")

EXIT_USAGE, EXIT_MISSING, EXIT_CONFIG, EXIT_CONSISTENCY = 1, 2, 3, 4


class MissingInput(LandUseError):
    def __init__(self, path):
        self.path = Path(path)
        super().__init__(f"missing input: {path}")


# -- manifests ---------------------------------------------------------------

def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "landuse_cdr": __version__}
    for pkg in ("numpy", "pandas", "numba", "shapely"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            pass
    return out


def _rel(path: Path, root: Path) -> str:
    try:
        return str(path.resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def write_manifest(stage: str, cfg: PipelineConfig, inputs, outputs, extra=None) -> Path:
    root = cfg.workdir
    doc = {
        "stage": stage,
        "seed": cfg["seed"],
        # thread count and work directory location do not affect any output
        "config": {k: v for k, v in cfg.to_dict().items() if k not in ("threads", "paths.workdir")},
        "inputs": {_rel(p, root): sha256(p) for p in inputs},
        "outputs": {_rel(p, root): sha256(p) for p in outputs},
        "versions": _versions(),
    }
    if extra:
        doc.update(extra)
    path = root / f"{stage}.manifest.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- cross-validation votes --------------------------------------------------

def write_cv_votes(cv: CVResult, path):
    names = [f"v_{LandUseClass(c).short.lower()}" for c in cv.classes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "fold", "truth_code", *names])
        for (i, j), f, t, row in zip(cv.cells.tolist(), cv.folds.tolist(), cv.truth.tolist(),
                                     cv.fractions.tolist()):
            w.writerow([i, j, f, t, *map(repr, row)])


def read_cv_votes(path) -> CVResult:
    df = pd.read_csv(path, float_precision="round_trip")
    vcols = [c for c in df.columns if c.startswith("v_")]
    classes = tuple(int(LandUseClass.parse(c[2:])) for c in vcols)
    return CVResult(df[["row", "col"]].to_numpy(dtype=np.int64), df["truth_code"].to_numpy(dtype=np.int64),
                    df["fold"].to_numpy(dtype=np.int64), classes, df[vcols].to_numpy(dtype=float))


# -- stages ------------------------------------------------------------------

def _need(*paths):
    for p in paths:
        if not Path(p).exists():
            raise MissingInput(p)
    return list(paths)


def _zoning_grid(cfg):
    return read_zoning_csv(cfg.path("zoning_grid"), cfg.grid)


def stage_synth(cfg: PipelineConfig):
    sc = cfg.synth_config()
    zg = generate_layout(sc)
    out = [cfg.path("truth"), cfg.path("zoning"), cfg.path("events"), cfg.path("synth_config")]
    write_zoning_csv(zg, out[0])
    polygons_to_geojson(layout_polygons(zg), out[1])
    write_events_csv(generate_events(zg, sc, cfg.window), out[2], sc.utc_offset)
    write_config(sc, out[3])
    return [], out


def stage_rasterize(cfg):
    inputs = _need(cfg.path("zoning"))
    zg = rasterize_zoning(load_geojson(inputs[0]), cfg.grid, cfg["rasterize.min_coverage"])
    out = cfg.path("zoning_grid")
    write_zoning_csv(zg, out)
    log.info("rasterized %d labeled cells", int(zg.labeled.sum()))
    return inputs, [out]


def stage_ingest(cfg):
    inputs = _need(cfg.path("events"))
    cube = bin_events(read_events_csv(inputs[0]), cfg.grid, cfg.window)
    out = [cfg.path("cube"), cfg.path("cube_meta")]
    write_cube(cube, *out)
    s = cube.stats
    log.info("binned %d of %d rows (%d unreadable, %d off-grid, %d outside window)",
             s.binned, s.rows_read, s.skipped_rows, s.outside_grid, s.outside_window)
    return inputs, out


def stage_features(cfg):
    inputs = _need(cfg.path("cube"), cfg.path("cube_meta"), cfg.path("zoning_grid"))
    cube = read_cube(inputs[0], inputs[1])
    if cube.spec != cfg.grid:
        raise ConsistencyError("activity cube grid differs from the configured grid")
    zg = _zoning_grid(cfg)
    active = select_active(cube, zg, cfg["ingest.min_total_events"])
    fm, rs = compute_features(cube, active)
    out = [cfg.path("features"), cfg.path("residuals"), cfg.path("class_profiles")]
    write_features(fm, out[0])
    write_residuals(rs, out[1])
    write_class_profiles(class_average_profiles(rs, zg), out[2])
    log.info("features for %d active cells", len(fm))
    return inputs, out


def stage_train(cfg):
    inputs = _need(cfg.path("features"), cfg.path("zoning_grid"))
    zg = _zoning_grid(cfg)
    fm = restrict_classes(read_features(inputs[0]), zg, cfg["forest.classes"])
    if len(fm) == 0:
        raise ConsistencyError("no active cells of the selected classes")
    cl = classify(fm, zg, cfg.forest_config(), tune=cfg["forest.tune"], weights=cfg["forest.weights"])
    out = [cfg.path("forest"), cfg.path("cv_votes")]
    cl.forest.save(out[0])
    write_cv_votes(cl.cv, out[1])
    return inputs, out


def stage_predict(cfg):
    source = cfg["predict.source"]
    if source == "oof":
        inputs = _need(cfg.path("cv_votes"), cfg.path("forest"))
        forest = Forest.load(inputs[1])
        cv = read_cv_votes(inputs[0])
        if cv.classes != forest.classes:
            raise ConsistencyError("cross-validation votes and forest cover different classes")
        pg = PredictionGrid.from_cells(cfg.grid, cv.cells, cv.predict(forest.weights))
    else:
        inputs = _need(cfg.path("features"), cfg.path("forest"), cfg.path("zoning_grid"))
        forest = Forest.load(inputs[1])
        fm = restrict_classes(read_features(inputs[0]), _zoning_grid(cfg), forest.classes)
        pg = PredictionGrid.from_cells(cfg.grid, fm.cells, forest.predict(fm.X))
    out = cfg.path("predictions")
    write_predictions(pg, out)
    return inputs, [out]


def stage_smooth(cfg):
    inputs = _need(cfg.path("predictions"))
    pg = second_pass(read_predictions(inputs[0], cfg.grid), iterate=cfg["smooth.iterate"])
    out = cfg.path("smoothed")
    write_predictions(pg, out)
    return inputs, [out]


def stage_evaluate(cfg):
    inputs = _need(cfg.path("zoning_grid"), cfg.path("predictions"), cfg.path("smoothed"),
                   cfg.path("residuals"), cfg.path("forest"))
    zg = _zoning_grid(cfg)
    raw = read_predictions(inputs[1], cfg.grid)
    smooth = read_predictions(inputs[2], cfg.grid)
    forest = Forest.load(inputs[4])
    reports = {name: confusion(zg, pg, forest.classes, forest.weights)
               for name, pg in (("raw", raw), ("smoothed", smooth))}
    groups = error_groups(zg, raw, read_residual_values(inputs[3]), cfg["evaluate.focal"])
    baseline = naive_baseline(zg, raw.active)
    out = [cfg.path("report_text"), cfg.path("report_json"), cfg.path("error_groups")]
    with open(out[0], "w") as fh:
        fh.write(reports["raw"].to_text("Classifier output"))
        fh.write("\n")
        fh.write(reports["smoothed"].to_text("After second pass"))
        fh.write(f"\nAll-Residential baseline accuracy: {baseline:.2f}\n")
    doc = {name: r.to_dict() for name, r in reports.items()}
    doc["naive_baseline"] = baseline
    doc["error_groups"] = {"focal": groups.focal.name.lower(), "counts": groups.counts}
    with open(out[1], "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_error_groups(groups, out[2])
    log.info("accuracy raw %.4f, smoothed %.4f", reports["raw"].total_accuracy,
             reports["smoothed"].total_accuracy)
    return inputs, out


STAGES = {
    "synth": stage_synth,
    "rasterize": stage_rasterize,
    "ingest": stage_ingest,
    "features": stage_features,
    "train": stage_train,
    "predict": stage_predict,
    "smooth": stage_smooth,
    "evaluate": stage_evaluate,
}
PIPELINE = ("rasterize", "ingest", "features", "train", "predict", "smooth", "evaluate")

HELP = {
    "synth": "generate a synthetic city: zoning polygons, truth grid and event log",
    "rasterize": "zoning polygons -> per-cell land-use grid",
    "ingest": "event log -> hour-of-week activity cube",
    "features": "activity cube -> residual series and 49 features per active cell",
    "train": "cross-validate, tune vote weights and grow the forest",
    "predict": "classify active cells (out-of-fold votes or the full forest)",
    "smooth": "neighbour-majority second pass",
    "evaluate": "confusion reports and error-group profiles",
    "pipeline": "run rasterize through evaluate",
}


def run_stage(name: str, cfg: PipelineConfig):
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    log.info("stage %s", name)
    inputs, outputs = STAGES[name](cfg)
    write_manifest(name, cfg, inputs, outputs)


# -- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
    common.add_argument("--threads", type=int, help="worker threads, 0 = one per core")
    common.add_argument("--workdir", metavar="DIR", help="artifact directory (overrides 'paths.workdir')")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser = _Parser(prog="landuse-cdr", description="Land-use classification from phone activity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    for name in (*STAGES, "pipeline"):
        sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
    return parser


def load_config(args) -> PipelineConfig:
    raw = read_config_file(args.config) if args.config else {}
    raw.update(parse_overrides(args.overrides))
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.threads is not None:
        raw["threads"] = str(args.threads)
    if args.workdir is not None:
        raw["paths.workdir"] = args.workdir
    return PipelineConfig.build(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        if args.config and not Path(args.config).exists():
            raise MissingInput(args.config)
        cfg = load_config(args)
        for name in (PIPELINE if args.command == "pipeline" else (args.command,)):
            run_stage(name, cfg)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except LandUseError as exc:
        log.error("inconsistent inputs: %s", exc)
        return EXIT_CONSISTENCY
    return 0


if __name__ == "__main__":
    sys.exit(main())
