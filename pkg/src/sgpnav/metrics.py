"""Trajectory metrics and trial success evaluation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .control import ControlInput
from .errors import InsufficientDataError, InvalidArgumentError, UndefinedCurvatureError
from .planner import SafetyLimits, WorldPose

V_EPS = 0.05
DEFAULT_GOAL_RADIUS = 0.5
LOG_COLUMNS = ("t", "x", "y", "z", "yaw", "roll", "pitch", "v", "omega")
OUTCOMES = ("reached", "attitude-violation", "timeout", "out-of-bounds", "no-subgoal")
METRIC_FIELDS = (
    "distance",
    "roll_max_abs",
    "pitch_max_abs",
    "vibration_avg",
    "elevation_rate_avg",
    "curvature_change",
)


@dataclass(frozen=True)
class TrajectoryLog:
    """Column-oriented log; row k is (t, pose, u) at control tick k."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    yaw: np.ndarray
    roll: np.ndarray
    pitch: np.ndarray
    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        cols = {}
        for name in LOG_COLUMNS:
            cols[name] = np.asarray(getattr(self, name), dtype=float).reshape(-1)
        n = cols["t"].size
        if any(c.size != n for c in cols.values()):
            raise InvalidArgumentError("trajectory columns differ in length")
        if n > 1 and not np.all(np.diff(cols["t"]) > 0):
            raise InvalidArgumentError("trajectory times must be strictly increasing")
        for name, c in cols.items():
            object.__setattr__(self, name, c)

    def __len__(self) -> int:
        return self.t.size

    @classmethod
    def from_records(cls, records: Iterable[tuple[float, WorldPose, ControlInput]]) -> "TrajectoryLog":
        rows = [
            (t, p.x, p.y, p.z, p.yaw, p.roll, p.pitch, u.linear_velocity, u.angular_velocity)
            for t, p, u in records
        ]
        arr = np.array(rows, dtype=float).reshape(-1, len(LOG_COLUMNS))
        return cls(*arr.T)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "TrajectoryLog":
        arr = np.asarray(arr, dtype=float).reshape(-1, len(LOG_COLUMNS))
        return cls(*arr.T)

    def as_array(self) -> np.ndarray:
        return np.column_stack([getattr(self, c) for c in LOG_COLUMNS])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in self.as_array().tolist():
                w.writerow([repr(v) for v in row])

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != LOG_COLUMNS:
                raise InvalidArgumentError(f"{path}: trajectory CSV header must be {','.join(LOG_COLUMNS)}")
            rows = [[float(v) for v in row] for row in reader if row]
        return cls.from_array(np.array(rows, dtype=float))


@dataclass(frozen=True)
class TrialMetrics:
    distance: float
    roll_max_abs: float
    pitch_max_abs: float
    vibration_avg: float
    elevation_rate_avg: float
    curvature_change: Optional[float]
    success: bool
    outcome_reason: str

    def __post_init__(self):
        if self.outcome_reason not in OUTCOMES:
            raise InvalidArgumentError(f"unknown outcome {self.outcome_reason!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialMetrics":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def _duration(log: TrajectoryLog, need: int) -> float:
    if len(log) < need:
        raise InsufficientDataError(f"metric needs at least {need} log records, got {len(log)}")
    return float(log.t[-1] - log.t[0])


def vibration(log: TrajectoryLog) -> float:
    dur = _duration(log, 2)
    return float(np.sum(np.abs(np.diff(log.roll)) + np.abs(np.diff(log.pitch))) / dur)


def elevation_rate(log: TrajectoryLog) -> float:
    dur = _duration(log, 2)
    return float(np.sum(np.abs(np.diff(log.z))) / dur)


def curvature_change(log: TrajectoryLog, v_eps: float = V_EPS) -> float:
    """Time-average of |dk/dt| with k = |omega / v| over samples with |v| >= v_eps.

    Excluded samples are dropped and the average is taken over the span of
    the remaining ones.
    """
    _duration(log, 3)
    keep = np.abs(log.v) >= v_eps
    if not keep.any():
        raise UndefinedCurvatureError("every sample is below the curvature velocity cutoff")
    k = np.abs(log.omega[keep] / log.v[keep])
    t = log.t[keep]
    if k.size < 2:
        return 0.0
    span = float(t[-1] - t[0])
    return float(np.sum(np.abs(np.diff(k))) / span)


def path_length(log: TrajectoryLog) -> float:
    return float(np.sum(np.hypot(np.diff(log.x), np.diff(log.y))))


def evaluate_trial(
    log: TrajectoryLog,
    limits: SafetyLimits,
    goal,
    goal_radius: float = DEFAULT_GOAL_RADIUS,
    max_time: float = math.inf,
    termination: Optional[str] = None,
) -> TrialMetrics:
    """Score a trial. ``termination`` is the runner's stop reason, if any."""
    if len(log) < 1:
        raise InsufficientDataError("empty trajectory log")
    if termination is not None and termination not in OUTCOMES:
        raise InvalidArgumentError(f"unknown termination reason {termination!r}")
    g = np.asarray(goal, dtype=float).reshape(-1)
    roll_max = float(np.max(np.abs(log.roll)))
    pitch_max = float(np.max(np.abs(log.pitch)))
    reached = math.hypot(log.x[-1] - g[0], log.y[-1] - g[1]) <= goal_radius
    attitude_ok = roll_max < limits.roll_max and pitch_max < limits.pitch_max
    in_time = float(log.t[-1]) <= max_time
    success = bool(reached and attitude_ok and in_time and termination in (None, "reached"))
    if success:
        reason = "reached"
    elif not attitude_ok:
        reason = "attitude-violation"
    elif termination not in (None, "reached"):
        reason = termination
    else:
        reason = "timeout"
    if len(log) >= 2 and log.t[-1] > log.t[0]:
        vib = vibration(log)
        zr = elevation_rate(log)
    else:
        vib = zr = 0.0
    try:
        cchg = curvature_change(log)
    except (InsufficientDataError, UndefinedCurvatureError):
        cchg = None
    return TrialMetrics(
        distance=path_length(log),
        roll_max_abs=roll_max,
        pitch_max_abs=pitch_max,
        vibration_avg=vib,
        elevation_rate_avg=zr,
        curvature_change=cchg,
        success=success,
        outcome_reason=reason,
    )


# ---------------------------------------------------------------------------
# Batch summaries
# ---------------------------------------------------------------------------


def summarize(rows: Sequence[TrialMetrics]) -> dict:
    """Mean and sample std of each metric plus the success rate."""
    out = {"trials": len(rows), "success_rate": float(np.mean([r.success for r in rows])) if rows else 0.0}
    for name in METRIC_FIELDS:
        vals = np.array([getattr(r, name) for r in rows if getattr(r, name) is not None], dtype=float)
        out[f"{name}_mean"] = float(vals.mean()) if vals.size else float("nan")
        out[f"{name}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    return out


def write_batch_csv(path, scenario_rows: dict[str, list[tuple]]) -> None:
    """One row per trial, then a "mean ± std" summary row per scenario.

    Each trial is ``(seed, metrics)`` or ``(seed, metrics, error)``; a trial
    whose metrics are None is written as an error row and left out of the
    summary statistics but counted as a failure in the success rate.
    """
    header = ["scenario", "seed", "row"] + list(METRIC_FIELDS) + ["success", "outcome_reason"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for name, trials in scenario_rows.items():
            done = []
            for seed, m, *rest in trials:
                if m is None:
                    err = rest[0] if rest and rest[0] else "unknown error"
                    w.writerow([name, seed, "trial"] + [""] * len(METRIC_FIELDS) + [0, f"error: {err}"])
                    continue
                done.append(m)
                w.writerow(
                    [name, seed, "trial"]
                    + ["" if getattr(m, f) is None else repr(getattr(m, f)) for f in METRIC_FIELDS]
                    + [int(m.success), m.outcome_reason]
                )
            s = summarize(done)
            rate = sum(m.success for m in done) / len(trials) if trials else 0.0
            w.writerow(
                [name, "", "summary"]
                + [f"{s[f'{f}_mean']:.6g} ± {s[f'{f}_std']:.6g}" for f in METRIC_FIELDS]
                + [f"{rate:.3f}", ""]
            )
