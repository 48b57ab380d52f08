"""Uniform analysis lattice and majority-area rasterization of zoning polygons.

Coordinates are planar meters. Cell ``(i, j)`` covers the half-open box
``[x0 + j*s, x0 + (j+1)*s) x [y0 + i*s, y0 + (i+1)*s)``, so row 0 is the
southern edge of the grid.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ConfigError, GeometryError

log = logging.getLogger(__name__)

UNLABELED = 0


class LandUseClass(IntEnum):
    RESIDENTIAL = 1
    COMMERCIAL = 2
    INDUSTRIAL = 3
    PARKS = 4
    OTHER = 5

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def parse(cls, value) -> "LandUseClass":
        """Accept a class name (any case), a short table name or an integer code."""
        if isinstance(value, LandUseClass):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        text = str(value).strip()
        if text.isdigit():
            return cls(int(text))
        key = text.upper()
        if key in cls.__members__:
            return cls[key]
        for member, short in _SHORT.items():
            if short.upper() == key:
                return member
        raise ValueError(f"unknown land use class {value!r}")


_SHORT = {
    LandUseClass.RESIDENTIAL: "Res",
    LandUseClass.COMMERCIAL: "Com",
    LandUseClass.INDUSTRIAL: "Ind",
    LandUseClass.PARKS: "Prk",
    LandUseClass.OTHER: "Oth",
}

ALL_CLASSES = tuple(LandUseClass)


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    n_rows: int
    n_cols: int
    cell_size: float = 200.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ConfigError(f"cell_size must be positive, got {self.cell_size}")
        if int(self.n_rows) < 1 or int(self.n_cols) < 1:
            raise ConfigError(f"grid needs at least one row and column, got {self.n_rows}x{self.n_cols}")
        if not (np.isfinite(self.origin_x) and np.isfinite(self.origin_y)):
            raise ConfigError("grid origin must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.n_rows), int(self.n_cols))

    @property
    def n_cells(self) -> int:
        return int(self.n_rows) * int(self.n_cols)

    @property
    def cell_area(self) -> float:
        return float(self.cell_size) ** 2

    def x_edge(self, j):
        return self.origin_x + np.asarray(j) * self.cell_size

    def y_edge(self, i):
        return self.origin_y + np.asarray(i) * self.cell_size

    def cell_bounds(self, i: int, j: int) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of cell (i, j)."""
        return (float(self.x_edge(j)), float(self.y_edge(i)),
                float(self.x_edge(j + 1)), float(self.y_edge(i + 1)))

    def locate(self, x, y):
        """Map coordinates to (row, col, inside) arrays; east/north edges belong to the next cell."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = np.floor((x - self.origin_x) / self.cell_size).astype(np.int64)
        row = np.floor((y - self.origin_y) / self.cell_size).astype(np.int64)
        inside = (row >= 0) & (row < self.n_rows) & (col >= 0) & (col < self.n_cols)
        return row, col, inside

    def to_dict(self) -> dict:
        return {"origin_x": float(self.origin_x), "origin_y": float(self.origin_y),
                "n_rows": int(self.n_rows), "n_cols": int(self.n_cols),
                "cell_size": float(self.cell_size)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(float(d["origin_x"]), float(d["origin_y"]), int(d["n_rows"]),
                   int(d["n_cols"]), float(d.get("cell_size", 200.0)))


def neighbors8(spec: GridSpec, i: int, j: int) -> list[tuple[int, int]]:
    """In-bounds Moore neighbours of (i, j), row-major order."""
    if not (0 <= i < spec.n_rows and 0 <= j < spec.n_cols):
        raise ValueError(f"cell ({i}, {j}) outside {spec.n_rows}x{spec.n_cols} grid")
    out = []
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            a, b = i + di, j + dj
            if 0 <= a < spec.n_rows and 0 <= b < spec.n_cols:
                out.append((a, b))
    return out


def _open_ring(coords, index, what) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise GeometryError(index, f"{what} is not a coordinate list")
    ring = ring[:, :2]
    if not np.all(np.isfinite(ring)):
        raise GeometryError(index, f"{what} has non-finite coordinates")
    if len(ring) < 4:
        raise GeometryError(index, f"{what} has {len(ring)} vertices, closed rings need at least 4")
    if not np.array_equal(ring[0], ring[-1]):
        raise GeometryError(index, f"{what} is not closed")
    return ring


@dataclass(frozen=True)
class ZoningPolygon:
    """A zoning parcel. Rings are stored closed (first vertex repeated last)."""

    exterior: np.ndarray
    land_use: LandUseClass
    holes: tuple = field(default_factory=tuple)

    @classmethod
    def from_coords(cls, exterior, land_use, holes=(), index=0) -> "ZoningPolygon":
        poly = cls(_open_ring(exterior, index, "exterior ring"), LandUseClass.parse(land_use),
                   tuple(_open_ring(h, index, f"hole {k}") for k, h in enumerate(holes)))
        poly.validate(index)
        return poly

    def validate(self, index=0):
        from shapely.geometry import Polygon
        from shapely.validation import explain_validity

        _open_ring(self.exterior, index, "exterior ring")
        for k, h in enumerate(self.holes):
            _open_ring(h, index, f"hole {k}")
        shape = Polygon(self.exterior, [h for h in self.holes])
        if not shape.is_valid:
            raise GeometryError(index, explain_validity(shape))
        if shape.area <= 0:
            raise GeometryError(index, "zero area")

    @property
    def bounds(self):
        return (*self.exterior.min(axis=0), *self.exterior.max(axis=0))


def _clip_half(poly: np.ndarray, axis: int, bound: float, keep_greater: bool) -> np.ndarray:
    # One Sutherland-Hodgman stage against an axis-aligned half plane.
    if len(poly) == 0:
        return poly
    v = poly[:, axis]
    inside = v >= bound if keep_greater else v <= bound
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    nxt = np.roll(poly, -1, axis=0)
    nin = np.roll(inside, -1)
    cross = inside != nin
    dv = nxt[:, axis] - v
    t = np.zeros_like(v)
    t[cross] = (bound - v[cross]) / dv[cross]
    ip = poly + t[:, None] * (nxt - poly)
    ip[:, axis] = bound
    out = np.stack([ip, nxt], axis=1)
    keep = np.stack([cross, nin], axis=1)
    return out[keep]


def clip_to_box(ring: np.ndarray, xmin, ymin, xmax, ymax) -> np.ndarray:
    """Clip an open ring (no repeated closing vertex) to a rectangle.

    Concave input may produce zero-width slivers along the box boundary;
    they contribute no area.
    """
    p = _clip_half(ring, 0, xmin, True)
    p = _clip_half(p, 0, xmax, False)
    p = _clip_half(p, 1, ymin, True)
    return _clip_half(p, 1, ymax, False)


def ring_area(ring: np.ndarray) -> float:
    if len(ring) < 3:
        return 0.0
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _ring_cell_areas(ring: np.ndarray, spec: GridSpec, out: np.ndarray, sign: float):
    # Clip to row strips first, then each strip to its columns.
    open_ring = ring[:-1]
    xmin, ymin = open_ring.min(axis=0)
    xmax, ymax = open_ring.max(axis=0)
    cs = spec.cell_size
    i0 = max(int(np.floor((ymin - spec.origin_y) / cs)), 0)
    i1 = min(int(np.floor((ymax - spec.origin_y) / cs)), spec.n_rows - 1)
    j0 = max(int(np.floor((xmin - spec.origin_x) / cs)), 0)
    j1 = min(int(np.floor((xmax - spec.origin_x) / cs)), spec.n_cols - 1)
    for i in range(i0, i1 + 1):
        strip = _clip_half(open_ring, 1, float(spec.y_edge(i)), True)
        strip = _clip_half(strip, 1, float(spec.y_edge(i + 1)), False)
        if len(strip) < 3:
            continue
        for j in range(j0, j1 + 1):
            piece = _clip_half(strip, 0, float(spec.x_edge(j)), True)
            piece = _clip_half(piece, 0, float(spec.x_edge(j + 1)), False)
            a = ring_area(piece)
            if a > 0.0:
                out[i, j] += sign * a


def coverage_fractions(polygons, spec: GridSpec) -> np.ndarray:
    """Per-class covered fraction of every cell, shape (5, n_rows, n_cols).

    Plane ``k`` holds class code ``k + 1``. Holes subtract only from their
    own parent polygon.
    """
    areas = np.zeros((len(ALL_CLASSES), *spec.shape))
    for poly in polygons:
        plane = areas[int(poly.land_use) - 1]
        _ring_cell_areas(poly.exterior, spec, plane, 1.0)
        for hole in poly.holes:
            _ring_cell_areas(hole, spec, plane, -1.0)
    np.clip(areas, 0.0, None, out=areas)
    return areas / spec.cell_area


@dataclass(frozen=True)
class ZoningGrid:
    """Per-cell land-use codes; 0 marks an unlabeled cell."""

    spec: GridSpec
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int8)
        if labels.shape != self.spec.shape:
            raise ConfigError(f"labels shape {labels.shape} != grid shape {self.spec.shape}")
        if labels.min(initial=0) < 0 or labels.max(initial=0) > len(ALL_CLASSES):
            raise ConfigError("labels must be 0 (unlabeled) or a class code 1..5")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    def label_of(self, i: int, j: int):
        code = int(self.labels[i, j])
        return LandUseClass(code) if code else None

    def to_csv(self, path):
        write_zoning_csv(self, path)


def rasterize_zoning(polygons, spec: GridSpec, min_coverage: float = 0.0) -> ZoningGrid:
    """Label each cell with the class covering the largest share of its area.

    Cells with no coverage, or total coverage below ``min_coverage``, stay
    unlabeled. Exact area ties go to the lower class code.
    """
    if not 0.0 <= min_coverage <= 1.0:
        raise ConfigError(f"min_coverage must lie in [0, 1], got {min_coverage}")
    polygons = list(polygons)
    if not polygons:
        return ZoningGrid(spec, np.zeros(spec.shape, dtype=np.int8))
    frac = coverage_fractions(polygons, spec)
    total = frac.sum(axis=0)
    labels = (np.argmax(frac, axis=0) + 1).astype(np.int8)
    labels[(total <= 0.0) | (total < min_coverage)] = UNLABELED
    return ZoningGrid(spec, labels)


@dataclass(frozen=True)
class ClassShares:
    counts: dict
    percent: dict

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def class_shares(zg: ZoningGrid, classes=ALL_CLASSES) -> ClassShares:
    codes = zg.labels[zg.labeled]
    counts = {c: int(np.count_nonzero(codes == int(c))) for c in classes}
    n = sum(counts.values())
    percent = {c: (100.0 * k / n if n else 0.0) for c, k in counts.items()}
    return ClassShares(counts, percent)


# -- I/O ---------------------------------------------------------------------

def load_geojson(path) -> list[ZoningPolygon]:
    """Read a FeatureCollection of Polygon/MultiPolygon features with a ``land_use`` property."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise GeometryError(None, "expected a GeoJSON FeatureCollection")
    polygons = []
    for index, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if "land_use" not in props:
            raise GeometryError(index, "missing 'land_use' property")
        try:
            land_use = LandUseClass.parse(props["land_use"])
        except ValueError as exc:
            raise GeometryError(index, str(exc)) from None
        geom = feat.get("geometry") or {}
        kind = geom.get("type")
        if kind == "Polygon":
            parts = [geom["coordinates"]]
        elif kind == "MultiPolygon":
            parts = geom["coordinates"]
        else:
            raise GeometryError(index, f"unsupported geometry type {kind!r}")
        for rings in parts:
            if not rings:
                raise GeometryError(index, "polygon without rings")
            polygons.append(ZoningPolygon.from_coords(rings[0], land_use, rings[1:], index=index))
    return polygons


def polygons_to_geojson(polygons, path):
    feats = []
    for poly in polygons:
        rings = [poly.exterior.tolist()] + [h.tolist() for h in poly.holes]
        feats.append({"type": "Feature",
                      "properties": {"land_use": poly.land_use.name.lower()},
                      "geometry": {"type": "Polygon", "coordinates": rings}})
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": feats}, fh)


def write_zoning_csv(zg: ZoningGrid, path):
    rows, cols = np.nonzero(zg.labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", "land_use_code"])
        for i, j in zip(rows.tolist(), cols.tolist()):
            w.writerow([i, j, int(zg.labels[i, j])])


def read_zoning_csv(path, spec: GridSpec) -> ZoningGrid:
    labels = np.zeros(spec.shape, dtype=np.int8)
    with open(Path(path), newline="") as fh:
        for rec in csv.DictReader(fh):
            labels[int(rec["row"]), int(rec["col"])] = int(rec["land_use_code"])
    return ZoningGrid(spec, labels)
