"""Accuracy, row-normalized confusion matrices and error-group profiles."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ConfigError
from .grid import ALL_CLASSES, LandUseClass, ZoningGrid
from .ingest import SLOTS
from .postprocess import PredictionGrid
from .rforest import thresholds_from_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionReport:
    classes: tuple
    total_accuracy: float
    land_share: np.ndarray      # per class, fraction of evaluated cells
    counts: np.ndarray          # (true, predicted) cell counts
    confusion: np.ndarray       # row-normalized counts
    vote_thresholds: np.ndarray | None = None

    @property
    def n_cells(self) -> int:
        return int(self.counts.sum())

    def recall(self) -> dict:
        return {LandUseClass(c): float(self.confusion[k, k]) for k, c in enumerate(self.classes)
                if self.counts[k].sum()}

    def to_dict(self) -> dict:
        names = [LandUseClass(c).short for c in self.classes]
        return {
            "classes": names,
            "class_codes": list(self.classes),
            "n_cells": self.n_cells,
            "total_accuracy": self.total_accuracy,
            "land_share": dict(zip(names, self.land_share.tolist())),
            "vote_thresholds": (dict(zip(names, self.vote_thresholds.tolist()))
                                if self.vote_thresholds is not None else None),
            "confusion": {a: dict(zip(names, row)) for a, row in zip(names, self.confusion.tolist())},
            "counts": {a: dict(zip(names, row)) for a, row in zip(names, self.counts.tolist())},
        }

    def to_text(self, title: str = "") -> str:
        names = [LandUseClass(c).short for c in self.classes]
        w = 7
        head = " " * 14 + "".join(f"{n:>{w}}" for n in names)
        lines = []
        if title:
            lines.append(title)
        lines.append(f"Total Accuracy: {self.total_accuracy:.2f}   ({self.n_cells} cells)")
        lines.append(head)
        lines.append(f"{'Land Share:':<14}" + "".join(f"{v:>{w}.2f}" for v in self.land_share))
        if self.vote_thresholds is not None:
            lines.append(f"{'Vote Thresh:':<14}" + "".join(f"{v:>{w}.2f}" for v in self.vote_thresholds))
        lines.append("Confusion Matrix (rows: zoned use, columns: predicted use)")
        lines.append(head)
        for n, row in zip(names, self.confusion):
            lines.append(f"{n:<14}" + "".join(f"{v:>{w}.2f}" for v in row))
        return "\n".join(lines) + "\n"


def _paired(truth: ZoningGrid, pred: PredictionGrid):
    if truth.spec != pred.spec:
        raise ConsistencyError("truth and prediction grids differ")
    active = pred.active
    if not active.any():
        raise ConsistencyError("prediction grid has no active cells")
    unlabeled = active & ~truth.labeled
    if unlabeled.any():
        raise ConsistencyError(f"{int(unlabeled.sum())} predicted cells have no zoning label")
    return truth.labels[active].astype(np.int64), pred.predicted[active].astype(np.int64)


def confusion(truth: ZoningGrid, pred: PredictionGrid, class_subset=ALL_CLASSES,
              weights=None) -> ConfusionReport:
    """Row-normalized confusion over ``class_subset``; cells of other true classes are dropped."""
    classes = tuple(sorted(int(LandUseClass.parse(c)) for c in class_subset))
    t, p = _paired(truth, pred)
    keep = np.isin(t, classes)
    t, p = t[keep], p[keep]
    outside = ~np.isin(p, classes)
    if outside.any():
        raise ConsistencyError(f"{int(outside.sum())} predictions fall outside the evaluated classes")
    n = len(classes)
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (np.searchsorted(classes, t), np.searchsorted(classes, p)), 1)
    row = counts.sum(axis=1, keepdims=True)
    conf = np.divide(counts, row, out=np.zeros((n, n)), where=row > 0)
    total = counts.sum()
    share = row[:, 0] / total if total else np.zeros(n)
    acc = float(np.trace(counts) / total) if total else 0.0
    thresholds = thresholds_from_weights(weights) if weights is not None else None
    return ConfusionReport(classes, acc, share, counts, conf, thresholds)


def naive_baseline(truth: ZoningGrid, active=None) -> float:
    """Accuracy of labelling every evaluated cell Residential."""
    mask = truth.labeled if active is None else (np.asarray(active, dtype=bool) & truth.labeled)
    codes = truth.labels[mask]
    if codes.size == 0:
        raise ConfigError("no labeled cells to evaluate")
    return float(np.count_nonzero(codes == int(LandUseClass.RESIDENTIAL)) / codes.size)


@dataclass(frozen=True)
class ErrorGroupProfiles:
    """Group I: focal predicted focal. II: other use predicted focal. III: focal predicted other."""

    focal: LandUseClass
    counts: dict
    profiles: dict   # group -> (168,) mean residual, or None when empty
    members: dict    # group -> (n, 2) cell indices


GROUPS = ("I", "II", "III")


def error_groups(truth: ZoningGrid, pred: PredictionGrid, residuals, focal) -> ErrorGroupProfiles:
    """Mean residual weekly profile of each error group relative to ``focal``.

    ``residuals`` is a ResidualSeries or a ``(cells, values)`` pair.
    """
    focal = LandUseClass.parse(focal)
    cells, values = (residuals.cells, residuals.values) if hasattr(residuals, "values") else residuals
    cells = np.asarray(cells, dtype=np.int64)
    if truth.spec != pred.spec:
        raise ConsistencyError("truth and prediction grids differ")
    active = pred.active
    have = np.zeros(truth.spec.shape, dtype=bool)
    have[cells[:, 0], cells[:, 1]] = True
    if (active & ~have).any():
        raise ConsistencyError("residual series missing for some predicted cells")
    sel = active[cells[:, 0], cells[:, 1]]
    cells, values = cells[sel], np.asarray(values)[sel]
    t = truth.labels[cells[:, 0], cells[:, 1]].astype(int)
    p = pred.predicted[cells[:, 0], cells[:, 1]].astype(int)
    f = int(focal)
    masks = {"I": (t == f) & (p == f), "II": (t != f) & (p == f), "III": (t == f) & (p != f)}
    counts, profiles, members = {}, {}, {}
    for g in GROUPS:
        m = masks[g]
        counts[g] = int(m.sum())
        profiles[g] = values[m].mean(axis=0) if m.any() else None
        members[g] = cells[m]
    return ErrorGroupProfiles(focal, counts, profiles, members)


# -- I/O ---------------------------------------------------------------------

def write_report(report: ConfusionReport, text_path, json_path, extra: dict | None = None, title=""):
    with open(text_path, "w") as fh:
        fh.write(report.to_text(title))
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    with open(json_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_error_groups(eg: ErrorGroupProfiles, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "hour_of_week", "mean_residual", "count"])
        for g in GROUPS:
            prof = eg.profiles[g]
            if prof is None:
                w.writerow([g, "", "", 0])
                continue
            for h in range(SLOTS):
                w.writerow([g, h, repr(float(prof[h])), eg.counts[g]])
