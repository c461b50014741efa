"""Trajectory and obstacle geometry.

Distances from points and trajectories to rotated box footprints, dynamic time
warping between trajectories, arc-length trajectory averaging, and the
search-fitness measure that combines obstacle proximity with execution
non-determinism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .flightdata import FlightLog, ObstacleBox


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped 3D flight path derived from the position channel."""

    timestamps: np.ndarray  # (n,)
    points: np.ndarray      # (n, 3)

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if ts.shape != (pts.shape[0],):
            raise ValueError("timestamps and points lengths differ")
        if ts.size < 2:
            raise ValueError("a trajectory needs at least 2 points")
        if not np.all(np.diff(ts) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")
        ts.setflags(write=False)
        pts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def trajectory_from_log(log: FlightLog) -> Trajectory:
    """Build a Trajectory from a flight log's position channel."""
    recs = log.channel("position")
    if len(recs) < 2:
        raise ValueError(f"flight {log.flight_id!r}: position channel has fewer than 2 records")
    ts = np.array([r.timestamp for r in recs])
    pts = np.array([[r.x, r.y, r.z] for r in recs])
    return Trajectory(ts, pts)


@dataclass(frozen=True)
class DistanceTrace:
    """Per-timestamp obstacle distance along a flight, linearly interpolable."""

    timestamps: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        ds = np.asarray(self.distances, dtype=float)
        if ts.shape != ds.shape or ts.ndim != 1 or ts.size == 0:
            raise ValueError("timestamps and distances must be equal-length 1D arrays")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("trace timestamps must be strictly increasing")
        ts.setflags(write=False)
        ds.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "distances", ds)

    @property
    def min_value(self) -> float:
        return float(self.distances.min())

    def value_at(self, t: float) -> float:
        """Distance at time t (clamped linear interpolation)."""
        return float(np.interp(t, self.timestamps, self.distances))

    def range_min(self, t0: float, t1: float) -> float:
        """Exact minimum of the piecewise-linear trace over [t0, t1].

        The range is clamped to the trace's span; for a linear interpolant the
        minimum is attained at an endpoint or at an interior sample.
        """
        if t1 < t0:
            raise ValueError("range_min needs t0 <= t1")
        lo = max(t0, float(self.timestamps[0]))
        hi = min(t1, float(self.timestamps[-1]))
        if hi < lo:  # range lies outside the trace: nearest edge value
            return self.value_at(lo)
        best = min(self.value_at(lo), self.value_at(hi))
        inner = self.distances[(self.timestamps > lo) & (self.timestamps < hi)]
        if inner.size:
            best = min(best, float(inner.min()))
        return best

    def first_time_below(self, threshold: float) -> float | None:
        """Timestamp of the first sample strictly below threshold, if any."""
        below = self.distances < threshold
        if not below.any():
            return None
        return float(self.timestamps[int(np.argmax(below))])


def point_box_distance(px: float, py: float, box: ObstacleBox) -> float:
    """Horizontal-plane distance from a point to a rotated box footprint.

    Zero when the point lies inside or on the rectangle.  Altitude is ignored;
    the box height is kept only for format completeness.
    """
    return float(_points_box_distance(np.array([[px, py]]), box)[0])


def _points_box_distance(xy: np.ndarray, box: ObstacleBox) -> np.ndarray:
    """Vectorized point -> rotated-rectangle distance for an (n, 2) array."""
    theta = math.radians(box.rotation)
    c, s = math.cos(theta), math.sin(theta)
    dx = xy[:, 0] - box.cx
    dy = xy[:, 1] - box.cy
    # rotate into the box frame, then clamp against the half extents
    lx = dx * c + dy * s
    ly = -dx * s + dy * c
    ex = np.maximum(np.abs(lx) - box.length / 2.0, 0.0)
    ey = np.maximum(np.abs(ly) - box.width / 2.0, 0.0)
    return np.hypot(ex, ey)


def _as_points(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.points
    pts = np.asarray(traj, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    return pts


def obstacle_distance_trace(traj: Trajectory, obstacles: Sequence[ObstacleBox]) -> DistanceTrace:
    """Per-timestamp minimum distance to any obstacle (+inf when none given)."""
    xy = traj.points[:, :2]
    if len(obstacles) == 0:
        dists = np.full(len(traj), np.inf)
    else:
        dists = np.min(np.stack([_points_box_distance(xy, box) for box in obstacles]), axis=0)
    return DistanceTrace(traj.timestamps, dists)


def min_obstacle_distance(traj: Trajectory,
                          obstacles: Sequence[ObstacleBox]) -> tuple[float, DistanceTrace]:
    """Flight-wide minimum obstacle distance plus the full distance trace."""
    trace = obstacle_distance_trace(traj, obstacles)
    return trace.min_value, trace


def sum_dist(traj, obstacles: Sequence[ObstacleBox]) -> float:
    """min over trajectory points of the summed distances to all obstacles."""
    if len(obstacles) == 0:
        raise ValueError("sum_dist is undefined for an empty obstacle list")
    xy = _as_points(traj)[:, :2]
    total = np.sum(np.stack([_points_box_distance(xy, box) for box in obstacles]), axis=0)
    return float(total.min())


def dtw(a, b) -> float:
    """Dynamic time warping cost between two 3D point sequences.

    Classic unconstrained DP with Euclidean local cost and total accumulated
    cost (no path-length normalization).  The sweep runs over anti-diagonals,
    which preserves the cell-by-cell accumulation order of the textbook
    recurrence, so results match exhaustive warping-path enumeration exactly.
    """
    pa = _as_points(a)
    pb = _as_points(b)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("dtw requires non-empty sequences")
    diff = pa[:, None, :] - pb[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for d in range(2, n + m + 1):
        i = np.arange(max(1, d - m), min(n, d - 1) + 1)
        if i.size == 0:
            continue
        j = d - i
        best = np.minimum(np.minimum(acc[i - 1, j], acc[i, j - 1]), acc[i - 1, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return float(acc[n, m])


def resample_by_arclength(points, n: int) -> np.ndarray:
    """Resample a polyline to n points uniformly spaced in normalized arc length.

    A degenerate polyline (zero total length) resamples to a constant sequence.
    """
    pts = _as_points(points)
    if n < 2:
        raise ValueError("resample_by_arclength needs n >= 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    grid = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(grid, s, pts[:, k]) for k in range(3)])


def average_trajectory(trajs: Iterable, resample_n: int = 200) -> np.ndarray:
    """Pointwise mean of trajectories after shared arc-length resampling."""
    stacks = [resample_by_arclength(t, resample_n) for t in trajs]
    if not stacks:
        raise ValueError("average_trajectory needs at least one trajectory")
    return np.mean(np.stack(stacks), axis=0)


@dataclass(frozen=True)
class FitnessParams:
    """Knobs of the execution-spread fitness: the DTW activation threshold and
    the expected number of executions."""

    max_dtw: float = 65.0
    n_executions: int = 1

    def __post_init__(self):
        if not self.max_dtw > 0:
            raise ValueError("max_dtw must be > 0")
        if self.n_executions < 1:
            raise ValueError("n_executions must be >= 1")


def fitness_components(trajs: Sequence, obstacles: Sequence[ObstacleBox],
                       params: FitnessParams | None = None, *,
                       resample_n: int = 200) -> dict[str, float]:
    """Fitness of one test case over its repeated executions, with components.

    Computes the mean DTW divergence of each execution from the average
    trajectory and the summed obstacle proximity of the average trajectory;
    the divergence term engages only above ``max_dtw``.  Lower is more
    interesting to the search this measure serves.
    """
    trajs = list(trajs)
    if not trajs:
        raise ValueError("fitness needs at least one trajectory")
    if params is None:
        params = FitnessParams(n_executions=len(trajs))
    elif params.n_executions != len(trajs):
        raise ValueError(
            f"params.n_executions={params.n_executions} but {len(trajs)} trajectories given")
    # executions are compared on the same arc-length grid the average lives on,
    # so identical executions give ave_dtw == 0
    resampled = [resample_by_arclength(t, resample_n) for t in trajs]
    ave = np.mean(np.stack(resampled), axis=0)
    ave_dtw = sum(dtw(t, ave) for t in resampled) / len(resampled)
    sd = sum_dist(ave, obstacles)
    fitness = sd - ave_dtw if ave_dtw > params.max_dtw else sd
    return {"sum_dist": sd, "ave_dtw": ave_dtw, "max_dtw": params.max_dtw,
            "n_executions": float(len(trajs)), "fitness": fitness}


def fitness_distance(trajs: Sequence, obstacles: Sequence[ObstacleBox],
                     params: FitnessParams | None = None, *, resample_n: int = 200) -> float:
    """Scalar fitness value; see :func:`fitness_components`."""
    return fitness_components(trajs, obstacles, params, resample_n=resample_n)["fitness"]
