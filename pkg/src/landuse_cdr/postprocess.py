"""Neighbour-majority second pass over predicted land-use labels."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import ALL_CLASSES, GridSpec

log = logging.getLogger(__name__)

RAW = "raw"
SMOOTHED = "smoothed"


@dataclass(frozen=True)
class PredictionGrid:
    """Predicted class codes on the grid; 0 marks cells without a prediction (inactive)."""

    spec: GridSpec
    predicted: np.ndarray
    provenance: str = RAW

    def __post_init__(self):
        pred = np.array(self.predicted, dtype=np.int8)
        if pred.shape != self.spec.shape:
            raise ConfigError(f"prediction shape {pred.shape} != grid shape {self.spec.shape}")
        if self.provenance not in (RAW, SMOOTHED):
            raise ConfigError(f"unknown provenance {self.provenance!r}")
        pred.setflags(write=False)
        object.__setattr__(self, "predicted", pred)

    @classmethod
    def from_cells(cls, spec: GridSpec, cells, codes, provenance=RAW) -> "PredictionGrid":
        grid = np.zeros(spec.shape, dtype=np.int8)
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        grid[cells[:, 0], cells[:, 1]] = codes
        return cls(spec, grid, provenance)

    @property
    def active(self) -> np.ndarray:
        return self.predicted != 0


def _neighbour_counts(pred: np.ndarray) -> np.ndarray:
    """Per-class count of 8-neighbours carrying each class code, shape (5, rows, cols)."""
    rows, cols = pred.shape
    padded = np.zeros((rows + 2, cols + 2), dtype=pred.dtype)
    padded[1:-1, 1:-1] = pred
    counts = np.zeros((len(ALL_CLASSES), rows, cols), dtype=np.int16)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = padded[1 + di:1 + di + rows, 1 + dj:1 + dj + cols]
            for k, c in enumerate(ALL_CLASSES):
                counts[k] += shifted == int(c)
    return counts


def second_pass(pg: PredictionGrid, iterate: bool = False, max_iter: int = 100) -> PredictionGrid:
    """Switch each active cell to the strict-majority class of its active neighbours.

    All cells are updated from the same input grid (synchronous sweep).
    Inactive cells neither change nor count toward the neighbourhood.
    ``iterate=True`` repeats the sweep until nothing changes. Synchronous
    majority sweeps can also settle into a two-step cycle; iteration then
    stops before repeating a grid and logs a warning.
    """
    if pg.provenance != RAW:
        raise ConfigError("second pass expects raw classifier predictions")
    pred = pg.predicted.copy()
    prev = None
    for _ in range(max_iter if iterate else 1):
        counts = _neighbour_counts(pred)
        n_active = counts.sum(axis=0)
        top = counts.argmax(axis=0)
        winner = np.asarray(ALL_CLASSES, dtype=np.int8)[top]
        majority = 2 * np.take_along_axis(counts, top[None], axis=0)[0] > n_active
        switch = (pred != 0) & majority & (winner != pred)
        if not switch.any():
            break
        nxt = np.where(switch, winner, pred)
        if prev is not None and np.array_equal(nxt, prev):
            log.warning("second pass oscillates on %d cells; stopping", int(switch.sum()))
            break
        prev, pred = pred, nxt
        log.debug("second pass switched %d cells", int(switch.sum()))
    return PredictionGrid(pg.spec, pred, SMOOTHED)


def write_predictions(pg: PredictionGrid, path):
    rows, cols = np.nonzero(pg.predicted)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "predicted_code", "provenance"])
        for i, j in zip(rows.tolist(), cols.tolist()):
            w.writerow([i, j, int(pg.predicted[i, j]), pg.provenance])


def read_predictions(path, spec: GridSpec) -> PredictionGrid:
    grid = np.zeros(spec.shape, dtype=np.int8)
    provenance = RAW
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            grid[int(rec["row"]), int(rec["col"])] = int(rec["predicted_code"])
            provenance = rec["provenance"]
    return PredictionGrid(spec, grid, provenance)
