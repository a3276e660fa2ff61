"""Obstacle geometry, scripted ground-truth motion and occupancy forecasting."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import RoadModel
from .geometry import (convex_hull, halfspaces_to_vertices, minkowski_sum_convex,  # noqa: F401
                       normalize_rows)
from .uncertainty import (PcaBox, PolyhedralSet, SampleSet, box_vertices, pca_box, singleton,
                          to_halfspaces)

log = logging.getLogger(__name__)


class InsufficientHistory(LookupError):
    pass


class SequencingError(ValueError):
    pass


@dataclass(frozen=True)
class ObstaclePolytope:
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A, b = normalize_rows(self.A, self.b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def vertices(self):
        return halfspaces_to_vertices(self.A, self.b)

    def translated(self, t):
        return ObstaclePolytope(self.A, self.b + self.A @ np.asarray(t, dtype=float))


def rectangle_vertices(center, heading, length, width):
    c, s = np.cos(heading), np.sin(heading)
    R = np.array([[c, -s], [s, c]])
    half = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * [length / 2.0, width / 2.0]
    pts = np.asarray(center, dtype=float) + half @ R.T
    return convex_hull(pts)


def rectangle_halfspaces(center, heading, length, width) -> ObstaclePolytope:
    """Oriented rectangle as four unit-normal halfspaces (front, back, left, right)."""
    if not (length > 0 and width > 0):
        raise ValueError("rectangle dimensions must be positive")
    c, s = np.cos(heading), np.sin(heading)
    fwd = np.array([c, s])
    left = np.array([-s, c])
    center = np.asarray(center, dtype=float)
    A = np.vstack([fwd, -fwd, left, -left])
    b = A @ center + np.array([length, length, width, width]) / 2.0
    return ObstaclePolytope(A, b)


@dataclass
class ObstacleScript:
    """Ground-truth obstacle motion.

    ``kind`` is ``"static"``, ``"longitudinal"`` (piecewise-constant
    acceleration along ``heading``) or ``"waypoints"`` (polyline traversed
    at per-segment speeds).  With ``frame="road"`` all positions are
    (arc length, lateral offset) pairs mapped through the road centre line,
    and longitudinal motion follows the road.  Uniform jitter of half-width
    ``jitter`` is added per step, seeded by ``(seed, index, step)``.
    """

    kind: str = "static"
    start: tuple = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 0.0
    accel_profile: tuple = ()  # ((t_start, accel), ...), times in s from t = 0
    waypoints: tuple = ()
    segment_speeds: tuple = ()
    frame: str = "inertial"
    jitter: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "longitudinal", "waypoints"):
            raise ValueError(f"unknown obstacle script kind {self.kind!r}")
        if self.frame not in ("inertial", "road"):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.kind == "waypoints":
            if len(self.waypoints) < 2 or len(self.segment_speeds) != len(self.waypoints) - 1:
                raise ValueError("waypoint script needs >= 2 points and one speed per segment")
            if any(v <= 0 for v in self.segment_speeds):
                raise ValueError("segment speeds must be positive")

    def _travel(self, t):
        """Distance covered along the heading since t = 0 (negative before)."""
        if t <= 0:
            return self.speed * t
        bps = sorted(self.accel_profile)
        times = [0.0] + [float(tb) for tb, _ in bps if tb > 0] + [np.inf]
        accels = [0.0] + [float(a) for tb, a in bps if tb > 0]
        for tb, a in bps:
            if tb <= 0:
                accels[0] = float(a)
        v, x = self.speed, 0.0
        for k in range(len(times) - 1):
            t0, t1, a = times[k], min(times[k + 1], t), accels[k]
            if t1 <= t0:
                break
            dt = t1 - t0
            if a < 0 and v + a * dt < 0:  # comes to rest and stays there
                stop = -v / a
                x += v * stop + 0.5 * a * stop**2
                v = 0.0
            else:
                x += v * dt + 0.5 * a * dt**2
                v += a * dt
        return x

    def nominal(self, t, road: RoadModel | None = None):
        """Jitter-free reference position at time ``t`` (inertial frame)."""
        local = self._local(t)
        if self.frame == "road":
            return (road or RoadModel()).to_inertial(local[0], local[1])
        return local

    def _local(self, t):
        """Position in the script's own frame."""
        start = np.asarray(self.start, dtype=float)
        if self.kind == "static":
            return start
        if self.kind == "longitudinal":
            dist = self._travel(t)
            if self.frame == "road":
                return start + np.array([dist, 0.0])
            return start + dist * np.array([np.cos(self.heading), np.sin(self.heading)])
        return self._along_waypoints(t)

    def _along_waypoints(self, t):
        pts = np.asarray(self.waypoints, dtype=float)
        seg_t = [np.linalg.norm(pts[i + 1] - pts[i]) / self.segment_speeds[i] for i in range(len(pts) - 1)]
        if t <= 0:  # extrapolate backwards along the first segment
            d = pts[1] - pts[0]
            return pts[0] + d / np.linalg.norm(d) * self.segment_speeds[0] * t
        for i, dur in enumerate(seg_t):
            if t <= dur:
                return pts[i] + (pts[i + 1] - pts[i]) * (t / dur)
            t -= dur
        return pts[-1]

    def initial_heading(self, road: RoadModel | None = None):
        return self.heading_at(0.0, road)

    def heading_at(self, t, road: RoadModel | None = None):
        """Ground-truth heading of the obstacle body at time ``t``."""
        if self.frame == "road":
            local = self._local(t)
            return float((road or RoadModel()).heading(local[0])) + self.heading
        if self.kind == "waypoints":
            pts = np.asarray(self.waypoints, dtype=float)
            seg = self._segment(t)
            d = pts[seg + 1] - pts[seg]
            return float(np.arctan2(d[1], d[0]))
        return self.heading

    def _segment(self, t):
        pts = np.asarray(self.waypoints, dtype=float)
        for i in range(len(pts) - 1):
            dur = np.linalg.norm(pts[i + 1] - pts[i]) / self.segment_speeds[i]
            if t <= dur:
                return i
            t -= dur
        return len(pts) - 2

    def position(self, t, step, seed=0, index=0, road: RoadModel | None = None):
        """Ground-truth position including seeded jitter."""
        pos = self.nominal(t, road)
        if self.jitter > 0:
            rng = np.random.default_rng([int(seed), int(index), int(step) + 1_000_000])
            pos = pos + rng.uniform(-self.jitter, self.jitter, size=2)
        return pos


class ObstacleTrack:
    """Ring buffer of past reference-point positions for one obstacle."""

    def __init__(self, capacity, T_s, heading=0.0, length=4.5, width=1.8):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.T_s = float(T_s)
        self.heading = float(heading)
        self.length = float(length)
        self.width = float(width)
        self._pos = deque(maxlen=self.capacity)
        self._t = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._pos)

    @property
    def positions(self):
        return np.array(self._pos).reshape(-1, 2)

    @property
    def timestamps(self):
        return np.array(self._t)

    @property
    def latest(self):
        if not self._pos:
            raise InsufficientHistory("track is empty")
        return self._pos[-1]

    def polytope(self):
        return rectangle_halfspaces(self.latest, self.heading, self.length, self.width)

    def polygon(self):
        return rectangle_vertices(self.latest, self.heading, self.length, self.width)


def record_position(track: ObstacleTrack, position, t):
    if track._t:
        expected = track._t[-1] + track.T_s
        if abs(t - expected) > 1e-6 * max(1.0, abs(expected)):
            raise SequencingError(f"timestamp {t} does not follow {track._t[-1]} by T_s={track.T_s}")
    track._pos.append(np.asarray(position, dtype=float).copy())
    track._t.append(float(t))


def displacement_samples(track: ObstacleTrack, k, N_s) -> SampleSet:
    """Up to ``N_s`` most recent k-step displacements, newest first."""
    n = len(track)
    if n < k + 1:
        raise InsufficientHistory(f"need {k + 1} positions for {k}-step displacements, have {n}")
    pos = track.positions
    count = min(N_s, n - k)
    newest = np.arange(n - 1, n - 1 - count, -1)
    return SampleSet(pos[newest] - pos[newest - k], k=k)


@dataclass(frozen=True)
class OccupancyForecast:
    base: ObstaclePolytope
    sets: tuple  # PolyhedralSet per step k = 1..N
    boxes: tuple  # PcaBox per step
    sample_counts: tuple
    coverage_excess: float = -np.inf  # max G w - h over all training samples
    under_sampled: bool = False
    polygon: np.ndarray = field(default=None)

    @property
    def horizon(self):
        return len(self.sets)

    def occupancy_polygon(self, k):
        """Vertices of the base occupancy swept by the step-``k`` uncertainty box (k >= 1)."""
        unc = convex_hull(box_vertices(self.boxes[k - 1]))
        return minkowski_sum_convex(self.polygon, unc)


def forecast_occupancy(track: ObstacleTrack, N, N_s) -> OccupancyForecast:
    """Uncertainty sets for the next ``N`` steps from the recorded history.

    With fewer than two usable samples for some step the set collapses to
    the origin (obstacle treated as momentarily static).
    """
    base = track.polytope()
    sets, boxes, counts = [], [], []
    excess = -np.inf
    under = False
    for k in range(1, N + 1):
        try:
            samples = displacement_samples(track, k, N_s)
        except InsufficientHistory:
            samples = None
        if samples is None or samples.count < 2:
            box = singleton()
            counts.append(0 if samples is None else samples.count)
            under = True
        else:
            box = pca_box(samples)
            counts.append(samples.count)
            if samples.count < N_s:
                under = True
        pset = to_halfspaces(box)
        if samples is not None and samples.count >= 2:
            excess = max(excess, float(np.max(samples.samples @ pset.G.T - pset.h)))
        sets.append(pset)
        boxes.append(box)
    if under:
        log.debug("under-sampled forecast: sample counts %s (target %d)", counts, N_s)
    return OccupancyForecast(base, tuple(sets), tuple(boxes), tuple(counts), excess, under,
                             polygon=track.polygon())


def static_forecast(polytope: ObstaclePolytope, N) -> OccupancyForecast:
    """Forecast for an obstacle known not to move: every set is the origin."""
    boxes = tuple(singleton() for _ in range(N))
    return OccupancyForecast(polytope, tuple(to_halfspaces(b) for b in boxes), boxes,
                             tuple([0] * N), polygon=polytope.vertices())


__all__ = [
    "ObstaclePolytope", "ObstacleScript", "ObstacleTrack", "OccupancyForecast", "PcaBox",
    "PolyhedralSet", "InsufficientHistory", "SequencingError", "displacement_samples",
    "forecast_occupancy", "minkowski_sum_convex", "record_position", "rectangle_halfspaces",
    "rectangle_vertices", "static_forecast",
]
