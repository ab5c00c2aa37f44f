"""Subgoal placement on feasible segments, cost evaluation and selection."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NoFeasibleSubgoalError
from .segmentation import Segment


def wrap_to_pi(a: float) -> float:
    """Wrap a scalar angle to [-pi, pi)."""
    return (float(a) + math.pi) % (2.0 * math.pi) - math.pi


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X rotation R = Rz(yaw) Ry(pitch) Rx(roll), body to world."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


@dataclass(frozen=True)
class WorldPose:
    position: np.ndarray
    yaw: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        if pos.shape == (2,):
            pos = np.append(pos, 0.0)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise InvalidArgumentError("pose position must be a finite 3-vector")
        for name in ("yaw", "roll", "pitch"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidArgumentError(f"pose {name} must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", wrap_to_pi(self.yaw))
        object.__setattr__(self, "roll", float(self.roll))
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def x(self) -> float:
        return float(self.position[0])

    @property
    def y(self) -> float:
        return float(self.position[1])

    @property
    def z(self) -> float:
        return float(self.position[2])

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.roll, self.pitch, self.yaw)


@dataclass(frozen=True)
class RobotSpec:
    width: float = 0.67
    safety_margin: float = 0.17

    def __post_init__(self):
        if not (self.width > 0 and self.safety_margin > 0):
            raise InvalidArgumentError("robot width and safety margin must be positive")

    @property
    def clearance_width(self) -> float:
        return self.width + self.safety_margin


@dataclass(frozen=True)
class SafetyLimits:
    """Attitude bounds (rad) and the admissible subgoal height band (m).

    When ``slope_height_range`` is None the band is derived from the pitch
    bound at the surface radius, see :meth:`height_range`.
    """

    roll_max: float = 0.524
    pitch_max: float = 0.785
    slope_height_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not (self.roll_max > 0 and self.pitch_max > 0):
            raise InvalidArgumentError("roll_max and pitch_max must be positive")
        if self.slope_height_range is not None:
            lo, hi = (float(v) for v in self.slope_height_range)
            if not lo < hi:
                raise InvalidArgumentError("slope_height_range needs z_min < z_max")
            object.__setattr__(self, "slope_height_range", (lo, hi))

    def height_range(self, r_oc: float) -> tuple[float, float]:
        if self.slope_height_range is not None:
            return self.slope_height_range
        h = r_oc * math.sin(min(self.pitch_max, math.pi / 2))
        return (-h, h)


@dataclass(frozen=True)
class CostWeights:
    k_dir: float = 0.2
    k_dst: float = 0.3
    k_stp: float = 0.5
    # smallest spread (dir rad, dst m, stp cost units) stretched to the full [0, 1]
    # range; narrower spreads are scaled by the floor instead
    spread_floor: tuple[float, float, float] = (0.0, 0.0, 0.1)

    def __post_init__(self):
        w = (self.k_dir, self.k_dst, self.k_stp)
        if any(v < 0 or not math.isfinite(v) for v in w):
            raise InvalidArgumentError("cost weights must be finite and non-negative")
        if not any(v > 0 for v in w):
            raise InvalidArgumentError("cost weights must not all be zero")
        floor = tuple(float(v) for v in self.spread_floor)
        if len(floor) != 3 or any(v < 0 or not math.isfinite(v) for v in floor):
            raise InvalidArgumentError("spread_floor needs three finite non-negative values")
        object.__setattr__(self, "spread_floor", floor)


@dataclass(frozen=True)
class Subgoal:
    """Candidate subgoal; raw costs in ``cost_components``, min-max scaled ones in ``normalized_costs``."""

    azimuth: float
    elevation: float
    radius: float
    robot_frame: np.ndarray
    world_frame: Optional[np.ndarray] = None
    cost_components: Optional[tuple[float, float, float]] = None
    normalized_costs: Optional[tuple[float, float, float]] = None
    total_cost: Optional[float] = None

    @classmethod
    def at(cls, azimuth: float, elevation: float, radius: float) -> "Subgoal":
        a = wrap_to_pi(azimuth)
        cb = math.cos(elevation)
        p = radius * np.array([cb * math.cos(a), cb * math.sin(a), math.sin(elevation)])
        return cls(a, float(elevation), float(radius), p)

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else [float(x) for x in v]

        return {
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "radius": self.radius,
            "robot_frame": arr(self.robot_frame),
            "world_frame": arr(self.world_frame),
            "cost_components": arr(self.cost_components),
            "normalized_costs": arr(self.normalized_costs),
            "total_cost": self.total_cost,
        }


def subgoal_azimuths(segment: Segment, clearance_width: float) -> list[float]:
    """Midpoint, or n-1 equidistant interior azimuths when the segment spans n >= 3 clearances."""
    n = math.floor(segment.width / clearance_width + 1e-9)
    if n >= 3:
        span = segment.alpha_end - segment.alpha_start
        return [segment.alpha_start + k * span / n for k in range(1, n)]
    return [segment.alpha_mid]


def place_subgoals(
    segments: Sequence[Segment],
    spec: RobotSpec,
    limits: SafetyLimits,
    r_oc: float,
) -> list[Subgoal]:
    z_min, z_max = limits.height_range(r_oc)
    unit = spec.clearance_width
    out = []
    for seg in segments:
        if seg.width <= unit or not (z_min <= seg.height <= z_max):
            continue
        for a in subgoal_azimuths(seg, unit):
            out.append(Subgoal.at(a, seg.elevation, r_oc))
    return out


def to_world(sub: Subgoal, pose: WorldPose) -> Subgoal:
    return replace(sub, world_frame=pose.rotation() @ sub.robot_frame + pose.position)


def steepness_cost(dz: float, pitch: float) -> float:
    return dz * dz + math.exp(np.sign(pitch) * dz) * abs(pitch)


def _minmax(v: np.ndarray, floor: float = 0.0) -> np.ndarray:
    lo, hi = v.min(), v.max()
    # spreads at rounding level count as constant
    if not hi - lo > 1e-12 * max(abs(lo), abs(hi), 1.0):
        return np.zeros_like(v)
    return (v - lo) / max(hi - lo, floor)


def evaluate_subgoals(
    subs: Sequence[Subgoal],
    pose: WorldPose,
    final_goal,
    weights: CostWeights,
) -> list[Subgoal]:
    """Fill costs. ``pose`` is the robot frame origin the subgoals were observed from."""
    if len(subs) < 1:
        raise InvalidArgumentError("evaluate_subgoals needs at least one subgoal")
    goal = np.asarray(final_goal, dtype=float).reshape(-1)[:2]
    raw = np.zeros((len(subs), 3))
    for i, s in enumerate(subs):
        if s.world_frame is None:
            raise InvalidArgumentError("subgoal has no world coordinates; call to_world first")
        gx, gy, gz = s.world_frame
        bearing = math.atan2(gy - pose.y, gx - pose.x)
        raw[i, 0] = abs(wrap_to_pi(bearing - pose.yaw))
        raw[i, 1] = math.hypot(goal[0] - gx, goal[1] - gy)
        raw[i, 2] = steepness_cost(gz - pose.z, pose.pitch)
    norm = np.column_stack([_minmax(raw[:, j], weights.spread_floor[j]) for j in range(3)])
    w = np.array([weights.k_dir, weights.k_dst, weights.k_stp])
    totals = norm @ w
    return [
        replace(
            s,
            cost_components=tuple(float(v) for v in raw[i]),
            normalized_costs=tuple(float(v) for v in norm[i]),
            total_cost=float(totals[i]),
        )
        for i, s in enumerate(subs)
    ]


def select_index(subs: Sequence[Subgoal]) -> int:
    if len(subs) == 0:
        raise NoFeasibleSubgoalError("no candidate subgoals")
    for s in subs:
        if s.total_cost is None:
            raise InvalidArgumentError("subgoal has not been scored")

    def key(i):
        s = subs[i]
        direction = abs(s.cost_components[0]) if s.cost_components else 0.0
        return (s.total_cost, direction, s.azimuth)

    return min(range(len(subs)), key=key)


def select(subs: Sequence[Subgoal]) -> Subgoal:
    return subs[select_index(subs)]


def trace_record(cycle: int, t: float, subs: Sequence[Subgoal], selected: Optional[int]) -> str:
    """One JSON-lines planner trace entry."""
    return json.dumps(
        {
            "cycle": cycle,
            "t": t,
            "selected": selected,
            "candidates": [s.to_dict() for s in subs],
        }
    )
