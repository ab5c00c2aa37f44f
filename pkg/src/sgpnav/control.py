"""Unicycle kinematics and the PID subgoal-tracking controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .planner import WorldPose, wrap_to_pi

STRAIGHT_LINE_OMEGA = 1e-9


@dataclass(frozen=True)
class ControlInput:
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0

    @property
    def v(self) -> float:
        return self.linear_velocity

    @property
    def omega(self) -> float:
        return self.angular_velocity


@dataclass(frozen=True)
class PidGains:
    kp_dist: float = 1.0
    ki_dist: float = 0.0
    kd_dist: float = 0.0
    kp_yaw: float = 2.0
    ki_yaw: float = 0.0
    kd_yaw: float = 0.0
    v_max: float = 0.8
    omega_max: float = 1.0
    integral_limit: float = 1.0

    def __post_init__(self):
        gains = (self.kp_dist, self.ki_dist, self.kd_dist, self.kp_yaw, self.ki_yaw, self.kd_yaw)
        if any(g < 0 for g in gains):
            raise InvalidArgumentError("PID gains must be non-negative")
        if not (self.v_max > 0 and self.omega_max > 0 and self.integral_limit > 0):
            raise InvalidArgumentError("v_max, omega_max and integral_limit must be positive")


@dataclass(frozen=True)
class PidState:
    integral_dist: float = 0.0
    integral_yaw: float = 0.0
    prev_dist: Optional[float] = None
    prev_yaw: Optional[float] = None


def tracking_errors(pose: WorldPose, target) -> tuple[float, float]:
    t = np.asarray(target, dtype=float).reshape(-1)
    dx, dy = t[0] - pose.x, t[1] - pose.y
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return 0.0, 0.0
    return dist, wrap_to_pi(math.atan2(dy, dx) - pose.yaw)


def _clip(v: float, lim: float) -> float:
    return max(-lim, min(lim, v))


def pid_step(
    errors: tuple[float, float],
    gains: PidGains,
    state: PidState,
    dt: float,
) -> tuple[ControlInput, PidState]:
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    e_d, e_y = float(errors[0]), float(errors[1])
    i_d = _clip(state.integral_dist + e_d * dt, gains.integral_limit)
    i_y = _clip(state.integral_yaw + e_y * dt, gains.integral_limit)
    de_d = 0.0 if state.prev_dist is None else (e_d - state.prev_dist) / dt
    de_y = 0.0 if state.prev_yaw is None else wrap_to_pi(e_y - state.prev_yaw) / dt
    v = gains.kp_dist * e_d + gains.ki_dist * i_d + gains.kd_dist * de_d
    w = gains.kp_yaw * e_y + gains.ki_yaw * i_y + gains.kd_yaw * de_y
    # turn in place once the target is abeam or behind
    gate = 0.0 if abs(e_y) >= math.pi / 2 else math.cos(e_y)
    v = _clip(v, gains.v_max) * gate
    w = _clip(w, gains.omega_max)
    return ControlInput(v, w), PidState(i_d, i_y, e_d, e_y)


def integrate_motion(pose: WorldPose, u: ControlInput, dt: float) -> WorldPose:
    """Exact unicycle step; z, roll and pitch are carried over unchanged."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    v, w = u.linear_velocity, u.angular_velocity
    th = pose.yaw
    x, y = pose.x, pose.y
    if abs(w) < STRAIGHT_LINE_OMEGA:
        x += v * math.cos(th) * dt
        y += v * math.sin(th) * dt
    else:
        th1 = th + w * dt
        x += (v / w) * (math.sin(th1) - math.sin(th))
        y -= (v / w) * (math.cos(th1) - math.cos(th))
    return replace(pose, position=np.array([x, y, pose.z]), yaw=th + w * dt)
