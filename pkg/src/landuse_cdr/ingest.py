"""Streaming aggregation of point events into average hour-of-week counts.

Hour-of-day is the local wall-clock hour as written in the event's RFC 3339
timestamp, so DST transition days bin by clock hour. Day 0 is Monday.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta

import numpy as np
import pandas as pd

from .errors import ConfigError, IngestError
from .grid import GridSpec

log = logging.getLogger(__name__)

DAYS = 7
HOURS = 24
SLOTS = DAYS * HOURS
MAX_SKIP_FRACTION = 0.01
DEFAULT_MIN_TOTAL_EVENTS = 50

_RFC3339 = r"^\d{4}-\d{2}-\d{2}[Tt ]\d{2}:\d{2}:\d{2}(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$"


@dataclass(frozen=True)
class Window:
    """Calendar dates ``start`` (inclusive) to ``end`` (exclusive), local time."""

    start: date
    end: date

    def __post_init__(self):
        if self.n_days < DAYS:
            raise ConfigError(f"observation window must span at least 7 days, got {self.n_days}")

    @classmethod
    def weeks(cls, start: date, n_weeks: int) -> "Window":
        return cls(start, start + timedelta(days=7 * n_weeks))

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days

    def observed_days(self) -> np.ndarray:
        days = np.zeros(DAYS, dtype=np.int64)
        for k in range(self.n_days):
            days[(self.start + timedelta(days=k)).weekday()] += 1
        return days

    def to_dict(self):
        return {"start": self.start.isoformat(), "end": self.end.isoformat()}

    @classmethod
    def from_dict(cls, d):
        return cls(date.fromisoformat(d["start"]), date.fromisoformat(d["end"]))


@dataclass(frozen=True)
class ActivityEvent:
    timestamp: datetime
    x: float
    y: float


@dataclass
class EventBatch:
    """Column-oriented events: local wall-clock times plus coordinates."""

    local: np.ndarray   # datetime64[s], wall clock as written
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_events(cls, events) -> "EventBatch":
        events = list(events)
        local = np.array([e.timestamp.replace(tzinfo=None) for e in events], dtype="datetime64[s]")
        return cls(local.reshape(-1), np.array([e.x for e in events], dtype=float),
                   np.array([e.y for e in events], dtype=float))


def parse_timestamps(values) -> tuple[np.ndarray, np.ndarray]:
    """Parse RFC 3339 strings into local wall-clock datetime64[s].

    Returns ``(local, ok)``; rows that fail to parse have ``ok == False``.
    """
    s = pd.Series(values, dtype="string").str.strip()
    ok = s.str.match(_RFC3339).fillna(False).to_numpy(dtype=bool)
    clock = s.str.slice(0, 19).str.replace(r"[t ]", "T", regex=True)
    parsed = pd.to_datetime(clock.where(ok), format="%Y-%m-%dT%H:%M:%S", errors="coerce")
    ok &= ~parsed.isna().to_numpy()
    local = parsed.to_numpy(dtype="datetime64[s]")
    return local, ok


@dataclass
class IngestStats:
    binned: int = 0
    outside_grid: int = 0
    outside_window: int = 0
    skipped_rows: int = 0
    rows_read: int = 0

    def merge(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(*(a + b for a, b in zip(vars(self).values(), vars(other).values())))


@dataclass(frozen=True)
class ActivityCube:
    """Average events per (cell, day-of-week, hour); ``counts`` has shape (rows, cols, 7, 24)."""

    spec: GridSpec
    counts: np.ndarray
    observed_days: np.ndarray
    total_events: np.ndarray
    window: Window | None = None
    stats: IngestStats = field(default_factory=IngestStats)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (*self.spec.shape, DAYS, HOURS):
            raise ConfigError(f"cube counts shape {counts.shape} does not match grid")
        if (counts < 0).any():
            raise ConfigError("cube counts must be non-negative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "observed_days", np.asarray(self.observed_days, dtype=np.int64))
        object.__setattr__(self, "total_events", np.asarray(self.total_events, dtype=np.int64))

    @classmethod
    def from_averages(cls, spec: GridSpec, counts, observed_days=None) -> "ActivityCube":
        """Build a cube from average counts; totals are reconstructed as average x days."""
        days = np.full(DAYS, 3) if observed_days is None else np.asarray(observed_days)
        counts = np.asarray(counts, dtype=float)
        totals = np.rint((counts * days[:, None]).sum(axis=(2, 3))).astype(np.int64)
        return cls(spec, counts, days, totals)

    def weekly(self) -> np.ndarray:
        """Per-cell 168-hour series, shape (rows, cols, 168)."""
        return self.counts.reshape(*self.spec.shape, SLOTS)

    def tallies(self) -> np.ndarray:
        return np.rint(self.counts * self.observed_days[:, None]).astype(np.int64)


class CubeAccumulator:
    """Integer tallies for one shard of the event stream; shards merge by addition."""

    def __init__(self, spec: GridSpec, window: Window):
        self.spec = spec
        self.window = window
        self.tally = np.zeros(spec.n_cells * SLOTS, dtype=np.int64)
        self.stats = IngestStats()
        self._start = np.datetime64(window.start, "D")
        self._end = np.datetime64(window.end, "D")

    def add(self, batch: EventBatch, skipped: int = 0):
        self.stats.rows_read += len(batch) + skipped
        self.stats.skipped_rows += skipped
        if len(batch) == 0:
            return
        day = batch.local.astype("datetime64[D]")
        in_window = (day >= self._start) & (day < self._end)
        row, col, in_grid = self.spec.locate(batch.x, batch.y)
        self.stats.outside_window += int(np.count_nonzero(~in_window))
        self.stats.outside_grid += int(np.count_nonzero(in_window & ~in_grid))
        keep = in_window & in_grid
        if not keep.any():
            return
        day = day[keep]
        # 1970-01-01 was a Thursday (weekday 3)
        dow = (day.astype(np.int64) + 3) % DAYS
        hour = ((batch.local[keep] - day).astype("timedelta64[s]").astype(np.int64) // 3600)
        cell = row[keep] * self.spec.n_cols + col[keep]
        flat = (cell * DAYS + dow) * HOURS + hour
        self.tally += np.bincount(flat, minlength=self.tally.size)
        self.stats.binned += int(keep.sum())

    def merge(self, other: "CubeAccumulator") -> "CubeAccumulator":
        if other.spec != self.spec or other.window != self.window:
            raise ConfigError("cannot merge accumulators over different grids or windows")
        out = CubeAccumulator(self.spec, self.window)
        out.tally = self.tally + other.tally
        out.stats = self.stats.merge(other.stats)
        return out

    def finish(self) -> ActivityCube:
        st = self.stats
        if st.rows_read and st.skipped_rows / st.rows_read > MAX_SKIP_FRACTION:
            raise IngestError(f"{st.skipped_rows} of {st.rows_read} event rows unreadable "
                              f"(limit {MAX_SKIP_FRACTION:.0%})")
        if st.skipped_rows:
            log.warning("skipped %d unreadable event rows", st.skipped_rows)
        if st.outside_grid or st.outside_window:
            log.info("%d events outside grid, %d outside window", st.outside_grid, st.outside_window)
        days = self.window.observed_days()
        tally = self.tally.reshape(*self.spec.shape, DAYS, HOURS)
        return ActivityCube(self.spec, tally / days[:, None], days, tally.sum(axis=(2, 3)),
                            self.window, st)


def _as_batches(events):
    pending = []
    for item in events:
        if isinstance(item, EventBatch):
            if pending:
                yield EventBatch.from_events(pending), 0
                pending = []
            yield item, 0
        elif isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], EventBatch):
            yield item
        else:
            pending.append(item)
            if len(pending) >= 65536:
                yield EventBatch.from_events(pending), 0
                pending = []
    if pending:
        yield EventBatch.from_events(pending), 0


def bin_events(events, spec: GridSpec, window: Window) -> ActivityCube:
    """Aggregate a stream of events into an ActivityCube.

    ``events`` may yield ``ActivityEvent`` objects, ``EventBatch`` chunks, or
    ``(EventBatch, n_skipped)`` pairs as produced by :func:`read_events_csv`.
    Only the tallies are held in memory.
    """
    acc = CubeAccumulator(spec, window)
    for batch, skipped in _as_batches(events):
        acc.add(batch, skipped)
    return acc.finish()


def apply_activity_threshold(cube: ActivityCube, min_total_events: int = DEFAULT_MIN_TOTAL_EVENTS) -> np.ndarray:
    """Boolean mask of cells whose total event count reaches the threshold."""
    if min_total_events < 0:
        raise ConfigError("min_total_events must be non-negative")
    return cube.total_events >= min_total_events


# -- I/O ---------------------------------------------------------------------

def read_events_csv(path, chunksize: int = 500_000):
    """Yield ``(EventBatch, n_skipped)`` chunks from a ``timestamp,x,y`` CSV (gzip allowed)."""
    reader = pd.read_csv(path, dtype=str, chunksize=chunksize, compression="infer",
                         keep_default_na=False)
    for chunk in reader:
        missing = {"timestamp", "x", "y"} - set(chunk.columns)
        if missing:
            raise IngestError(f"{path}: missing columns {sorted(missing)}")
        local, ok = parse_timestamps(chunk["timestamp"].to_numpy())
        x = pd.to_numeric(chunk["x"], errors="coerce").to_numpy(dtype=float)
        y = pd.to_numeric(chunk["y"], errors="coerce").to_numpy(dtype=float)
        ok &= np.isfinite(x) & np.isfinite(y)
        yield EventBatch(local[ok], x[ok], y[ok]), int(np.count_nonzero(~ok))


def format_timestamps(local: np.ndarray, offset: str) -> np.ndarray:
    return np.char.add(np.datetime_as_string(local.astype("datetime64[s]"), unit="s"), offset)


def write_cube(cube: ActivityCube, path, meta_path):
    avg = cube.counts
    idx = np.argwhere(avg > 0)
    with open(path, "w") as fh:
        fh.write("row,col,day,hour,avg_count\n")
        vals = avg[avg > 0]
        fh.writelines(f"{i},{j},{d},{h},{v!r}\n" for (i, j, d, h), v in zip(idx.tolist(), vals.tolist()))
    meta = {
        "grid": cube.spec.to_dict(),
        "window": cube.window.to_dict() if cube.window else None,
        "observed_days": cube.observed_days.tolist(),
        "stats": vars(cube.stats),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_cube(path, meta_path) -> ActivityCube:
    with open(meta_path) as fh:
        meta = json.load(fh)
    spec = GridSpec.from_dict(meta["grid"])
    days = np.asarray(meta["observed_days"], dtype=np.int64)
    counts = np.zeros((*spec.shape, DAYS, HOURS))
    df = pd.read_csv(path, dtype={"row": np.int64, "col": np.int64, "day": np.int64,
                                  "hour": np.int64, "avg_count": float},
                     float_precision="round_trip")
    counts[df["row"], df["col"], df["day"], df["hour"]] = df["avg_count"].to_numpy()
    totals = np.rint((counts * days[:, None]).sum(axis=(2, 3))).astype(np.int64)
    window = Window.from_dict(meta["window"]) if meta.get("window") else None
    return ActivityCube(spec, counts, days, totals, window, IngestStats(**meta.get("stats", {})))
