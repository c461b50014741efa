"""Heading-channel preprocessing into the windowed dataset.

Pipeline: unwrap the raw [-180, 180] heading angles into a continuous series,
resample onto a uniform grid, slice into overlapping fixed-length windows,
zero-center each window, annotate obstacle distances, and filter the nominal
(training) subset by a look-ahead distance rule.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .flightdata import FlightLabels, FlightLog, ObstacleBox
from .geometry import DistanceTrace, min_obstacle_distance, trajectory_from_log

_EPS = 1e-9


@dataclass(frozen=True)
class PreprocessConfig:
    """Windowing and nominal-filter parameters.

    Defaults: 5 s windows with 2.5 s overlap at 5 Hz (25 samples per window);
    a window is nominal when the obstacle distance stays above 3 m for the
    window plus the next 50 s.
    """

    window_length: float = 5.0
    overlap: float = 2.5
    sample_rate: float = 5.0
    nominal_distance: float = 3.0
    nominal_lookahead: float = 50.0

    def __post_init__(self):
        if not 0 < self.overlap < self.window_length:
            raise ValueError("need 0 < overlap < window_length")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be > 0")
        w = self.sample_rate * self.window_length
        if abs(w - round(w)) > 1e-6 or round(w) < 4:
            raise ValueError("sample_rate * window_length must be an integer >= 4")
        if self.nominal_distance < 0 or self.nominal_lookahead < 0:
            raise ValueError("nominal filter parameters must be >= 0")

    @property
    def window_samples(self) -> int:
        return int(round(self.sample_rate * self.window_length))

    @property
    def stride(self) -> float:
        return self.window_length - self.overlap


@dataclass(frozen=True)
class HeadingWindow:
    """One zero-centered heading window: a row of the windowed dataset."""

    flight_id: str
    index: int
    start: float
    end: float
    values: np.ndarray
    win_dist: float = math.inf
    min_dist: float = math.inf
    safety: str | None = None
    certainty: str | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def unwrap_heading(values) -> np.ndarray:
    """Continuous transformation of wrapped heading angles (degrees).

    The output differs from the input elementwise by multiples of 360 and has
    no consecutive difference larger than 180 in magnitude; the first element
    is unchanged.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return v.copy()
    return np.unwrap(v, period=360.0)


def resample_uniform(timestamps, values, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation onto a uniform grid from first to last timestamp."""
    ts = np.asarray(timestamps, dtype=float)
    vs = np.asarray(values, dtype=float)
    if ts.size != vs.size:
        raise ValueError("timestamps and values lengths differ")
    if ts.size < 2:
        raise ValueError("resampling needs at least 2 records")
    if rate <= 0:
        raise ValueError("rate must be > 0")
    n = int(math.floor((ts[-1] - ts[0]) * rate + _EPS)) + 1
    grid = ts[0] + np.arange(n) / rate
    return grid, np.interp(grid, ts, vs)


def safe_heading_series(log: FlightLog) -> tuple[np.ndarray, np.ndarray]:
    """Extract (timestamps, raw heading) from a flight log's safe channel."""
    recs = log.channel("safe")
    return (np.array([r.timestamp for r in recs]),
            np.array([r.r for r in recs]))


def make_windows(timestamps, headings, config: PreprocessConfig, *,
                 distance_trace: DistanceTrace | None = None,
                 labels: FlightLabels | None = None,
                 flight_id: str = "") -> list[HeadingWindow]:
    """Slice a uniform heading series into zero-centered overlapping windows.

    Window i nominally covers [i*stride, i*stride + window_length]; a trailing
    window that would extend past the series end is discarded.  Distance
    annotations come from the (independently clocked) distance trace when one
    is given and are +inf otherwise.
    """
    ts = np.asarray(timestamps, dtype=float)
    vs = np.asarray(headings, dtype=float)
    if ts.size != vs.size:
        raise ValueError("timestamps and headings lengths differ")
    w = config.window_samples
    if ts.size < w:
        return []
    t0 = float(ts[0])
    duration = float(ts[-1]) - t0
    min_dist = distance_trace.min_value if distance_trace is not None else math.inf
    safety = labels.safety if labels is not None else None
    certainty = labels.certainty if labels is not None else None
    windows: list[HeadingWindow] = []
    i = 0
    while i * config.stride + config.window_length <= duration + _EPS:
        start = t0 + i * config.stride
        first = int(math.ceil((start - t0) * config.sample_rate - _EPS))
        if first + w > ts.size:
            break
        chunk = vs[first:first + w]
        end = start + config.window_length
        win_dist = (distance_trace.range_min(start, end)
                    if distance_trace is not None else math.inf)
        windows.append(HeadingWindow(
            flight_id=flight_id, index=i, start=start, end=end,
            values=chunk - chunk.mean(), win_dist=win_dist, min_dist=min_dist,
            safety=safety, certainty=certainty))
        i += 1
    return windows


def filter_nominal(windows: Sequence[HeadingWindow], distance_trace: DistanceTrace | None,
                   config: PreprocessConfig) -> list[HeadingWindow]:
    """Keep windows whose obstacle distance stays above the nominal threshold
    for the window plus the look-ahead horizon (truncated at flight end).

    Without a distance trace every window is vacuously nominal.
    """
    if distance_trace is None:
        return list(windows)
    kept = []
    for w in windows:
        if distance_trace.range_min(w.start, w.end + config.nominal_lookahead) \
                > config.nominal_distance:
            kept.append(w)
    return kept


def filter_nominal_from_windows(windows: Sequence[HeadingWindow],
                                config: PreprocessConfig) -> list[HeadingWindow]:
    """Nominal filter driven by window annotations alone.

    Used where only the windowed dataset is available (no distance trace):
    a window is kept when no window of the same flight starting within the
    look-ahead horizon dips to the nominal threshold.  Conservative by at most
    one window length at the horizon's far edge.
    """
    by_flight: dict[str, list[HeadingWindow]] = {}
    for w in windows:
        by_flight.setdefault(w.flight_id, []).append(w)
    kept = []
    for flight_windows in by_flight.values():
        flight_windows.sort(key=lambda w: w.index)
        starts = np.array([w.start for w in flight_windows])
        dists = np.array([w.win_dist for w in flight_windows])
        for k, w in enumerate(flight_windows):
            horizon = w.end + config.nominal_lookahead
            ahead = (starts >= w.start - _EPS) & (starts <= horizon + _EPS)
            if float(dists[ahead].min()) > config.nominal_distance:
                kept.append(w)
    kept.sort(key=lambda w: (w.flight_id, w.index))
    return kept


def preprocess_flight(log: FlightLog, config: PreprocessConfig, *,
                      obstacles: Sequence[ObstacleBox] | None = None,
                      labels: FlightLabels | None = None,
                      ) -> tuple[list[HeadingWindow], DistanceTrace | None]:
    """Full per-flight pipeline: unwrap, resample, window, annotate distances.

    Returns the windows plus the distance trace (None when no obstacles are
    given or the log has no usable position channel).
    """
    ts, raw = safe_heading_series(log)
    if ts.size < 2:
        raise ValueError(f"flight {log.flight_id!r}: safe channel has fewer than 2 records")
    grid, headings = resample_uniform(ts, unwrap_heading(raw), config.sample_rate)
    trace = None
    if obstacles is not None and len(log.channel("position")) >= 2:
        _, trace = min_obstacle_distance(trajectory_from_log(log), obstacles)
    windows = make_windows(grid, headings, config, distance_trace=trace,
                           labels=labels, flight_id=log.flight_id)
    return windows, trace


def _fmt(x: float) -> str:
    return repr(float(x))


def write_windows_csv(windows: Sequence[HeadingWindow], target, *,
                      window_samples: int | None = None) -> None:
    """Persist the windowed dataset (header v-columns sized from the data)."""
    if windows:
        w = len(windows[0].values)
        if any(len(win.values) != w for win in windows):
            raise ValueError("inconsistent window lengths")
    elif window_samples is not None:
        w = window_samples
    else:
        raise ValueError("window_samples is required to write an empty dataset")
    stream, close = (open(target, "w", encoding="utf-8", newline=""), True) \
        if isinstance(target, (str, Path)) else (target, False)
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["flight_id", "index", "start_s", "end_s", "win_dist_m",
                         "min_dist_m", "safety", "certainty"]
                        + [f"v{k}" for k in range(w)])
        for win in windows:
            writer.writerow([win.flight_id, win.index, _fmt(win.start), _fmt(win.end),
                             _fmt(win.win_dist), _fmt(win.min_dist),
                             win.safety or "", win.certainty or ""]
                            + [_fmt(v) for v in win.values])
    finally:
        if close:
            stream.close()


def read_windows_csv(source) -> list[HeadingWindow]:
    """Read a windowed dataset written by :func:`write_windows_csv`."""
    stream, close = (open(source, "r", encoding="utf-8", newline=""), True) \
        if isinstance(source, (str, Path)) else (source, False)
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if header is None:
            raise ValueError("empty windowed dataset")
        fixed = ["flight_id", "index", "start_s", "end_s", "win_dist_m",
                 "min_dist_m", "safety", "certainty"]
        if header[:8] != fixed or any(not h.startswith("v") for h in header[8:]):
            raise ValueError(f"bad windowed dataset header: {header!r}")
        w = len(header) - 8
        windows = []
        for row in reader:
            if not row:
                continue
            if len(row) != 8 + w:
                raise ValueError(f"expected {8 + w} fields, got {len(row)}")
            windows.append(HeadingWindow(
                flight_id=row[0], index=int(row[1]), start=float(row[2]),
                end=float(row[3]), values=np.array([float(v) for v in row[8:]]),
                win_dist=float(row[4]), min_dist=float(row[5]),
                safety=row[6] or None, certainty=row[7] or None))
        return windows
    finally:
        if close:
            stream.close()


def attach_labels(windows: Sequence[HeadingWindow],
                  labels: Mapping[str, FlightLabels]) -> list[HeadingWindow]:
    """Copy per-flight labels onto windows (windows of unlabeled flights pass through)."""
    out = []
    for w in windows:
        lab = labels.get(w.flight_id)
        if lab is None:
            out.append(w)
        else:
            out.append(replace(w, safety=lab.safety, certainty=lab.certainty))
    return out
