import gzip
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from landuse_cdr.errors import ConfigError, IngestError
from landuse_cdr.grid import GridSpec
from landuse_cdr.ingest import (ActivityCube, ActivityEvent, CubeAccumulator, EventBatch, Window,
                                apply_activity_threshold, bin_events, parse_timestamps, read_cube,
                                read_events_csv, write_cube)

SPEC = GridSpec(0.0, 0.0, 2, 3, 100.0)
MON = date(2012, 1, 9)          # a Monday
WIN = Window.weeks(MON, 3)
EST = timezone(timedelta(hours=-5))


def ev(day, hour, x=50.0, y=50.0, minute=15, tz=EST):
    return ActivityEvent(datetime(day.year, day.month, day.day, hour, minute, tzinfo=tz), x, y)


def test_window_rules():
    assert WIN.n_days == 21
    assert WIN.observed_days().tolist() == [3] * 7
    assert Window(date(2012, 1, 11), date(2012, 1, 21)).observed_days().tolist() == [1, 1, 2, 2, 2, 1, 1]
    with pytest.raises(ConfigError):
        Window(MON, MON + timedelta(days=6))
    assert Window.from_dict(WIN.to_dict()) == WIN


def test_single_monday_event_averages_to_one_third():
    cube = bin_events([ev(MON, 9)], SPEC, WIN)
    assert cube.counts[0, 0, 0, 9] == pytest.approx(1 / 3, abs=1e-15)
    assert cube.counts.sum() == pytest.approx(1 / 3)
    assert cube.total_events[0, 0] == 1 and cube.total_events.sum() == 1


def test_empty_stream_gives_zero_cube():
    cube = bin_events([], SPEC, WIN)
    assert cube.counts.shape == (2, 3, 7, 24)
    assert not cube.counts.any() and not cube.total_events.any()


def test_constant_stream_gives_constant_average():
    k = 4
    events = [ev(MON + timedelta(days=d), h, x=150.0, minute=m)
              for d in range(21) for h in range(24) for m in range(k)]
    cube = bin_events(events, SPEC, WIN)
    assert np.all(cube.counts[0, 1] == k)
    assert cube.counts[0, 0].sum() == 0


def test_hour_is_local_wall_clock_and_day_zero_is_monday():
    # 23:30 local on Sunday at -05:00 is Monday 04:30 UTC; it must bin as Sunday 23h.
    sun = MON + timedelta(days=6)
    local, ok = parse_timestamps([f"{sun.isoformat()}T23:30:00-05:00", "2012-01-15T23:30:00Z",
                                  "2012-01-15 08:00:00+09:30", "garbage", "2012-13-40T00:00:00Z",
                                  "2012-01-15T08:00:00"])
    assert ok.tolist() == [True, True, True, False, False, False]
    cube = bin_events([EventBatch(local[ok], np.full(3, 10.0), np.full(3, 10.0))], SPEC, WIN)
    assert cube.counts[0, 0, 6, 23] * 3 == pytest.approx(2.0)
    assert cube.counts[0, 0, 6, 8] * 3 == pytest.approx(1.0)


def test_dst_day_bins_by_clock_hour():
    # 2012-03-11 was the US spring-forward day; 03:30-04:00 is a legal wall-clock time after the jump
    w = Window(date(2012, 3, 5), date(2012, 3, 12))
    local, ok = parse_timestamps(["2012-03-11T01:30:00-05:00", "2012-03-11T03:30:00-04:00"])
    cube = bin_events([EventBatch(local, np.array([1.0, 1.0]), np.array([1.0, 1.0]))], SPEC, w)
    assert cube.counts[0, 0, 6, 1] == 1 and cube.counts[0, 0, 6, 3] == 1 and cube.counts[0, 0, 6, 2] == 0


def test_out_of_grid_and_window_are_counted_not_errors():
    events = [ev(MON, 1, x=-1.0), ev(MON, 1, x=300.0), ev(MON, 1, y=200.0),
              ev(MON - timedelta(days=1), 1), ev(MON + timedelta(days=21), 0, minute=0), ev(MON, 1)]
    cube = bin_events(events, SPEC, WIN)
    assert cube.stats.outside_grid == 3 and cube.stats.outside_window == 2 and cube.stats.binned == 1
    # the east edge of cell (0, 2) is the grid edge: x = 300 is outside
    assert cube.total_events.sum() == 1


def test_boundary_event_goes_to_next_cell():
    cube = bin_events([ev(MON, 5, x=100.0, y=100.0)], SPEC, WIN)
    assert cube.total_events[1, 1] == 1


def test_threshold_monotone_and_extremes():
    rng = np.random.default_rng(3)
    tallies = rng.integers(0, 20, size=(2, 3, 7, 24))
    cube = ActivityCube(SPEC, tallies / 3.0, np.full(7, 3), tallies.sum(axis=(2, 3)))
    assert apply_activity_threshold(cube, 0).all()
    assert not apply_activity_threshold(cube, int(cube.total_events.max()) + 1).any()
    prev = None
    for t in range(0, int(cube.total_events.max()) + 2, 97):
        cur = apply_activity_threshold(cube, t)
        if prev is not None:
            assert not (cur & ~prev).any()
        assert np.array_equal(cur, cube.total_events >= t)
        prev = cur
    with pytest.raises(ConfigError):
        apply_activity_threshold(cube, -1)


def test_skip_fraction_abort(tmp_path):
    good = [f"2012-01-1{d}T10:00:00-05:00,10,10" for d in range(0, 9)] * 11
    path = tmp_path / "e.csv"
    path.write_text("timestamp,x,y\n" + "\n".join(good + ["nonsense,1,1"]) + "\n")
    cube = bin_events(read_events_csv(path), SPEC, WIN)           # 1 of 100 rows: allowed
    assert cube.stats.skipped_rows == 1 and cube.stats.binned == 99
    path.write_text("timestamp,x,y\n" + "\n".join(good + ["nonsense,1,1", "2012-01-10T10:00:00Z,abc,1"]) + "\n")
    with pytest.raises(IngestError):
        bin_events(read_events_csv(path), SPEC, WIN)


def test_gzip_csv_and_cube_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    n = 500
    secs = rng.integers(0, 21 * 86400, n)
    stamps = [(datetime(2012, 1, 9) + timedelta(seconds=int(s))).isoformat() + "-05:00" for s in secs]
    xs, ys = rng.uniform(0, 300, n), rng.uniform(0, 200, n)
    path = tmp_path / "e.csv.gz"
    with gzip.open(path, "wt") as fh:
        fh.write("timestamp,x,y\n")
        fh.writelines(f"{t},{x!r},{y!r}\n" for t, x, y in zip(stamps, xs.tolist(), ys.tolist()))
    cube = bin_events(read_events_csv(path, chunksize=77), SPEC, WIN)
    assert cube.stats.binned == n
    write_cube(cube, tmp_path / "c.csv", tmp_path / "c.json")
    back = read_cube(tmp_path / "c.csv", tmp_path / "c.json")
    assert np.array_equal(back.counts, cube.counts)
    assert np.array_equal(back.total_events, cube.total_events)
    assert back.window == WIN and back.spec == SPEC
    assert (tmp_path / "c.csv").read_text().startswith("row,col,day,hour,avg_count\n")


def _random_batch(rng, n):
    secs = rng.integers(-86400, 22 * 86400, n)
    local = np.datetime64("2012-01-09T00:00:00") + secs.astype("timedelta64[s]")
    return EventBatch(local, rng.uniform(-20, 320, n), rng.uniform(-20, 220, n))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_tally_identity_order_independence_and_sharding(seed, n_shards):
    rng = np.random.default_rng(seed)
    batch = _random_batch(rng, int(rng.integers(0, 400)))
    cube = bin_events([batch], SPEC, WIN)
    # average x observed days reproduces the integer tallies and the in-grid, in-window count
    assert np.abs(cube.counts * cube.observed_days[:, None] - cube.tallies()).max() < 1e-9
    assert cube.tallies().sum() == cube.stats.binned
    # shuffled order
    perm = rng.permutation(len(batch))
    shuffled = bin_events([EventBatch(batch.local[perm], batch.x[perm], batch.y[perm])], SPEC, WIN)
    assert np.array_equal(shuffled.counts, cube.counts)
    # arbitrary shards merged in arbitrary order
    cuts = np.sort(rng.integers(0, len(batch) + 1, n_shards - 1))
    parts = np.split(perm, cuts)
    accs = []
    for p in parts:
        a = CubeAccumulator(SPEC, WIN)
        a.add(EventBatch(batch.local[p], batch.x[p], batch.y[p]))
        accs.append(a)
    order = rng.permutation(len(accs))
    merged = accs[order[0]]
    for k in order[1:]:
        merged = merged.merge(accs[k])
    assert np.array_equal(merged.finish().counts, cube.counts)


def test_accepts_event_objects_and_batches_mixed():
    events = [ev(MON, 3), EventBatch(np.array(["2012-01-09T03:10:00"], dtype="datetime64[s]"),
                                     np.array([10.0]), np.array([10.0])), ev(MON, 3)]
    assert bin_events(events, SPEC, WIN).counts[0, 0, 0, 3] == pytest.approx(1.0)
