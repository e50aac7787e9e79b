"""Road test cases: control points, Catmull-Rom interpolation, validity,
structural features, random generation and mutation."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateSpec, GenerationExhausted, MutationExhausted

DEFAULT_SAMPLES_PER_SEGMENT = 20
DEFAULT_LANE_WIDTH = 4.0
DEFAULT_BBOX_SIDE = 250.0
DEFAULT_TURN_THRESHOLD_DEG = 5.0
START_END_TOLERANCE = 1e-6


class ControlPoint(NamedTuple):
    x: float
    y: float


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class RoadSpec:
    control_points: tuple[ControlPoint, ...]
    samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT
    lane_width: float = DEFAULT_LANE_WIDTH
    bbox_side: float = DEFAULT_BBOX_SIDE

    def __post_init__(self):
        pts = tuple(ControlPoint(float(p[0]), float(p[1])) for p in self.control_points)
        object.__setattr__(self, "control_points", pts)
        if len(pts) < 4:
            raise ValueError(f"a road needs at least 4 control points, got {len(pts)}")
        if not all(math.isfinite(c) for p in pts for c in p):
            raise ValueError("control points must be finite")
        if int(self.samples_per_segment) != self.samples_per_segment or self.samples_per_segment < 2:
            raise ValueError("samples_per_segment must be an integer >= 2")
        object.__setattr__(self, "samples_per_segment", int(self.samples_per_segment))
        if not self.lane_width > 0 or not self.bbox_side > 0:
            raise ValueError("lane_width and bbox_side must be positive")

    @property
    def points(self) -> np.ndarray:
        return np.array(self.control_points, dtype=float)

    def with_points(self, points) -> RoadSpec:
        return RoadSpec(
            tuple(map(tuple, np.asarray(points, dtype=float))),
            self.samples_per_segment,
            self.lane_width,
            self.bbox_side,
        )

    def reversed(self) -> RoadSpec:
        """The same road driven in the opposite direction."""
        return self.with_points(self.points[::-1])

    def to_dict(self) -> dict:
        return {
            "control_points": [[p.x, p.y] for p in self.control_points],
            "samples_per_segment": self.samples_per_segment,
            "lane_width": self.lane_width,
            "bbox_side": self.bbox_side,
        }

    @classmethod
    def from_dict(cls, data: dict) -> RoadSpec:
        return cls(
            tuple(tuple(p) for p in data["control_points"]),
            data.get("samples_per_segment", DEFAULT_SAMPLES_PER_SEGMENT),
            data.get("lane_width", DEFAULT_LANE_WIDTH),
            data.get("bbox_side", DEFAULT_BBOX_SIDE),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> RoadSpec:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class RoadPolyline:
    center_points: np.ndarray  # (n, 2), right-lane center line
    headings: np.ndarray  # (n,) tangent angle, radians
    cumulative_length: np.ndarray  # (n,) arc length from the start

    @property
    def length(self) -> float:
        return float(self.cumulative_length[-1])

    def __len__(self):
        return self.center_points.shape[0]

    @classmethod
    def from_points(cls, points) -> RoadPolyline:
        """Polyline from raw points, headings from central differences."""
        pts = np.ascontiguousarray(points, dtype=float)
        grad = np.gradient(pts, axis=0)
        headings = np.arctan2(grad[:, 1], grad[:, 0])
        seg = np.hypot(*np.diff(pts, axis=0).T)
        return cls(pts, headings, np.concatenate([[0.0], np.cumsum(seg)]))


def interpolate_catmull_rom(spec: RoadSpec) -> RoadPolyline:
    """Uniform Catmull-Rom interpolation of the control points.

    The curve runs from the second to the penultimate control point and
    passes exactly through every control point in between.
    """
    p = spec.points
    step = np.hypot(*np.diff(p, axis=0).T)
    if np.any(step == 0.0):
        raise DegenerateSpec("consecutive control points coincide")
    s = spec.samples_per_segment
    n_seg = len(p) - 3
    t = np.arange(s) / s
    t2, t3 = t * t, t * t * t

    p0, p1, p2, p3 = (p[k : k + n_seg][:, None, :] for k in range(4))
    c1 = -p0 + p2
    c2 = 2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3
    c3 = -p0 + 3.0 * p1 - 3.0 * p2 + p3
    tt = t[None, :, None]
    pts = 0.5 * (2.0 * p1 + c1 * tt + c2 * t2[None, :, None] + c3 * t3[None, :, None])
    der = 0.5 * (c1 + 2.0 * c2 * tt + 3.0 * c3 * t2[None, :, None])

    pts = np.concatenate([pts.reshape(-1, 2), p[-2][None, :]])
    end_tangent = 0.5 * (p[-1] - p[-3])
    der = np.concatenate([der.reshape(-1, 2), end_tangent[None, :]])
    # segment starts are exactly the control points
    pts[::s] = p[1:-1]

    headings = np.arctan2(der[:, 1], der[:, 0])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(seg == 0.0):
        raise DegenerateSpec("interpolated road has coincident consecutive points")
    return RoadPolyline(np.ascontiguousarray(pts), headings, np.concatenate([[0.0], np.cumsum(seg)]))


class InvalidReason(str, enum.Enum):
    START_EQUALS_END = "StartEqualsEnd"
    OUT_OF_BOUNDING_BOX = "OutOfBoundingBox"
    SELF_INTERSECTION = "SelfIntersection"


@dataclass(frozen=True)
class ValidityResult:
    reason: InvalidReason | None = None

    @property
    def valid(self) -> bool:
        return self.reason is None

    def __bool__(self):
        return self.valid


def validate_road(polyline: RoadPolyline, spec: RoadSpec) -> ValidityResult:
    pts = polyline.center_points
    if math.dist(pts[0], pts[-1]) <= START_END_TOLERANCE:
        return ValidityResult(InvalidReason.START_EQUALS_END)
    if pts.min() < 0.0 or pts.max() > spec.bbox_side:
        return ValidityResult(InvalidReason.OUT_OF_BOUNDING_BOX)
    i, _ = _kernels.first_self_intersection(pts)
    if i >= 0:
        return ValidityResult(InvalidReason.SELF_INTERSECTION)
    return ValidityResult()


def turn_sweeps(polyline: RoadPolyline) -> list[float]:
    """Signed heading sweep (radians) of every maximal same-sign run of heading changes."""
    deltas = np.arctan2(np.sin(np.diff(polyline.headings)), np.cos(np.diff(polyline.headings)))
    sweeps = []
    run_sign, acc = 0.0, 0.0
    for d in deltas:
        sign = np.sign(d)
        if sign != run_sign:
            if run_sign != 0:
                sweeps.append(acc)
            run_sign, acc = sign, 0.0
        acc += d
    if run_sign != 0:
        sweeps.append(acc)
    return [float(a) for a in sweeps]


def count_turns(polyline: RoadPolyline, angle_threshold: float = DEFAULT_TURN_THRESHOLD_DEG) -> int:
    limit = math.radians(angle_threshold)
    return sum(1 for a in turn_sweeps(polyline) if abs(a) > limit)


def min_radius(polyline: RoadPolyline) -> float:
    """Smallest circumradius over consecutive point triples; inf if all are collinear."""
    radii = _kernels.circumradii(polyline.center_points)
    return float(radii.min()) if radii.size else math.inf


@dataclass(frozen=True)
class RoadFeatures:
    turn_count: int
    curvature: float


def road_features(polyline: RoadPolyline, angle_threshold: float = DEFAULT_TURN_THRESHOLD_DEG) -> RoadFeatures:
    r = min_radius(polyline)
    return RoadFeatures(count_turns(polyline, angle_threshold), 0.0 if math.isinf(r) else 1.0 / r)


def features_of(spec: RoadSpec, angle_threshold: float = DEFAULT_TURN_THRESHOLD_DEG) -> RoadFeatures:
    return road_features(interpolate_catmull_rom(spec), angle_threshold)


def check_spec(spec: RoadSpec, max_curve_angle: float | None = None) -> RoadPolyline | None:
    """Interpolated polyline if ``spec`` yields a valid road, else None."""
    try:
        poly = interpolate_catmull_rom(spec)
    except DegenerateSpec:
        return None
    if not validate_road(poly, spec):
        return None
    if max_curve_angle is not None:
        limit = math.radians(max_curve_angle)
        if any(abs(a) > limit for a in turn_sweeps(poly)):
            return None
    return poly


def generate_random_road(
    seed,
    n_ctrl: int = 8,
    *,
    samples_per_segment: int = DEFAULT_SAMPLES_PER_SEGMENT,
    lane_width: float = DEFAULT_LANE_WIDTH,
    bbox_side: float = DEFAULT_BBOX_SIDE,
    segment_length: tuple[float, float] = (15.0, 35.0),
    max_turn_per_point: float = 100.0,
    max_curve_angle: float = 270.0,
    max_attempts: int = 1000,
) -> RoadSpec:
    """Random valid road built as a heading walk with bounded turning at each control point.

    The walk is centred in the bounding box. Candidates that are invalid or contain a
    curve sweeping more than ``max_curve_angle`` degrees are redrawn.
    """
    if n_ctrl < 4:
        raise ValueError(f"n_ctrl must be >= 4, got {n_ctrl}")
    rng = _as_rng(seed)
    max_step = math.radians(max_turn_per_point)
    for _ in range(max_attempts):
        heading = rng.uniform(0.0, 2.0 * math.pi)
        lengths = rng.uniform(segment_length[0], segment_length[1], size=n_ctrl - 1)
        turns = rng.uniform(-max_step, max_step, size=n_ctrl - 1)
        turns[0] = 0.0
        headings = heading + np.cumsum(turns)
        steps = np.column_stack([lengths * np.cos(headings), lengths * np.sin(headings)])
        pts = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pts += bbox_side / 2.0 - (lo + hi) / 2.0
        spec = RoadSpec(tuple(map(tuple, pts)), samples_per_segment, lane_width, bbox_side)
        if check_spec(spec, max_curve_angle) is not None:
            return spec
    raise GenerationExhausted(f"no valid road after {max_attempts} attempts")


def mutate_road(spec: RoadSpec, seed, displacement: float, max_attempts: int = 100) -> RoadSpec:
    """Displace one uniformly chosen interior control point by a uniform offset per axis."""
    rng = _as_rng(seed)
    base = spec.points
    n = len(base)
    for _ in range(max_attempts):
        idx = int(rng.integers(1, n - 1))
        offset = rng.uniform(-displacement, displacement, size=2)
        pts = base.copy()
        pts[idx] += offset
        candidate = spec.with_points(pts)
        if check_spec(candidate) is not None:
            return candidate
    raise MutationExhausted(f"no valid mutant after {max_attempts} attempts")
