"""Navigation loop: perceive -> segment -> plan -> control, stepped in simulated time."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .control import ControlInput, PidState, pid_step, tracking_errors
from .errors import BoundsError, DegenerateSurfaceError, NoFeasibleSubgoalError
from .metrics import TrajectoryLog, TrialMetrics, evaluate_trial
from .perception import (
    OccupancySamples,
    PointCloud,
    SurfaceGrid,
    fit_occupancy_model,
    predict_surfaces,
    to_occupancy_samples,
)
from .planner import (
    Subgoal,
    WorldPose,
    evaluate_subgoals,
    place_subgoals,
    select_index,
    to_world,
)
from .scenario import Scenario
from .segmentation import Segment, extract_border, normalize_variance, segment_border
from .simulator import TerrainHeightmap, pose_on_terrain, scan, sensor_pose, step_world
from .sparse_gp import SparseGPModel

DIRECT_TRACKING_FRACTION = 0.5  # of r_oc
COLD_START_FACTOR = 5  # iteration budget multiplier for a fit without a warm start


@dataclass
class NavigatorState:
    current_subgoal: Optional[Subgoal] = None
    target: Optional[np.ndarray] = None
    pid_state: PidState = field(default_factory=PidState)
    last_model: Optional[SparseGPModel] = None
    cycle_counter: int = 0
    fallback_since: Optional[float] = None
    mode: str = "idle"


@dataclass(frozen=True)
class PerceptionResult:
    cloud: PointCloud
    samples: OccupancySamples
    model: Optional[SparseGPModel]
    surfaces: Optional[SurfaceGrid]
    normalized: Optional[SurfaceGrid]
    segments: list[Segment]
    candidates: list[Subgoal]
    selected: Optional[int]


def cycle_seed(seed: int, cycle: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(cycle)]).generate_state(1)[0])


def perceive_and_plan(
    scenario: Scenario,
    terrain: TerrainHeightmap,
    pose: WorldPose,
    warm_start: Optional[SparseGPModel],
    seed: int,
    rng: Optional[np.random.Generator] = None,
) -> PerceptionResult:
    """One full perception + planning cycle at ``pose``."""
    cloud = scan(terrain, pose, scenario.lidar, rng)
    samples = to_occupancy_samples(cloud, scenario.surface)
    empty = PerceptionResult(cloud, samples, None, None, None, [], [], None)
    if len(samples) == 0:
        return empty
    cfg = replace(scenario.sgp, seed=seed, warm_start=warm_start)
    if warm_start is None:
        cfg = replace(cfg, max_iterations=cfg.max_iterations * COLD_START_FACTOR)
    model = fit_occupancy_model(samples, cfg, scenario.hyper_init, scenario.max_samples)
    surfaces = predict_surfaces(model, scenario.surface)
    try:
        normalized = normalize_variance(surfaces)
    except DegenerateSurfaceError:
        return replace(empty, model=model, surfaces=surfaces)
    border = extract_border(normalized, scenario.v_th)
    segments = segment_border(border, scenario.surface, scenario.elev_tol)
    subs = place_subgoals(segments, scenario.robot, scenario.limits, scenario.surface.r_oc)
    if not subs:
        return PerceptionResult(cloud, samples, model, surfaces, normalized, segments, [], None)
    sp = sensor_pose(pose, scenario.lidar)
    world = [to_world(s, sp) for s in subs]
    scored = evaluate_subgoals(world, sp, scenario.final_goal, scenario.weights)
    return PerceptionResult(
        cloud, samples, model, surfaces, normalized, segments, scored, select_index(scored)
    )


def _pose_dict(pose: WorldPose) -> dict:
    return {"x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw, "roll": pose.roll, "pitch": pose.pitch}


def navigation_cycle(
    scenario: Scenario,
    terrain: TerrainHeightmap,
    pose: WorldPose,
    nav: NavigatorState,
    t: float,
    rng: Optional[np.random.Generator] = None,
) -> tuple[NavigatorState, dict]:
    """Perception-rate update of the navigator target.

    Raises NoFeasibleSubgoalError once the fallback window has elapsed
    without a feasible candidate.
    """
    goal = np.array(scenario.final_goal, dtype=float)
    cycle = nav.cycle_counter
    trace = {"cycle": cycle, "t": t, "pose": _pose_dict(pose)}
    goal_dist = math.hypot(goal[0] - pose.x, goal[1] - pose.y)
    # direct tracking latches so subgoals beyond the goal cannot pull the robot away again
    if nav.mode == "direct" or goal_dist < DIRECT_TRACKING_FRACTION * scenario.surface.r_oc:
        nav = replace(nav, target=np.array([goal[0], goal[1], pose.z]), current_subgoal=None,
                      cycle_counter=cycle + 1, fallback_since=None, mode="direct")
        trace.update(mode="direct", candidates=[], selected=None)
        return nav, trace

    result = perceive_and_plan(
        scenario, terrain, pose, nav.last_model, cycle_seed(scenario.sim.seed, cycle), rng
    )
    model = result.model if result.model is not None else nav.last_model
    trace.update(
        num_points=len(result.cloud),
        num_samples=len(result.samples),
        segments=[s.__dict__ for s in result.segments],
        candidates=[s.to_dict() for s in result.candidates],
        selected=result.selected,
    )
    if result.model is not None:
        trace["hyper"] = result.model.hyper.to_dict()
    if result.selected is not None:
        sub = result.candidates[result.selected]
        nav = replace(nav, current_subgoal=sub, target=sub.world_frame, last_model=model,
                      cycle_counter=cycle + 1, fallback_since=None, mode="subgoal")
        trace["mode"] = "subgoal"
        return nav, trace
    if nav.fallback_since is not None:
        trace["mode"] = "no-subgoal"
        raise NoFeasibleSubgoalError(json.dumps(trace))
    nav = replace(nav, current_subgoal=None, target=None, last_model=model,
                  cycle_counter=cycle + 1, fallback_since=t, mode="fallback")
    trace["mode"] = "fallback"
    return nav, trace


def control_command(scenario: Scenario, pose: WorldPose, nav: NavigatorState) -> tuple[ControlInput, NavigatorState]:
    if nav.mode == "fallback" or nav.target is None:
        return ControlInput(0.0, 0.5 * scenario.gains.omega_max), nav
    errors = tracking_errors(pose, nav.target)
    u, pid = pid_step(errors, scenario.gains, nav.pid_state, scenario.sim.dt * scenario.sim.steps_per(scenario.sim.control_rate))
    return u, replace(nav, pid_state=pid)


@dataclass(frozen=True)
class TrialResult:
    log: TrajectoryLog
    metrics: TrialMetrics
    termination: str
    traces: list[dict]


def run_trial(
    scenario: Scenario,
    trace_sink: Optional[Callable[[dict], None]] = None,
    keep_traces: bool = False,
) -> TrialResult:
    """Simulate one trial to termination and score it.

    The sim clock is ``k * dt``; perception and control run on integer tick
    divisors so results do not depend on wall-clock timing.
    """
    terrain = scenario.validate()
    sim = scenario.sim
    per_perception = sim.steps_per(sim.perception_rate)
    per_control = sim.steps_per(sim.control_rate)
    max_steps = int(math.floor(sim.max_sim_time / sim.dt + 1e-9))
    rng = np.random.default_rng(sim.seed)
    goal = np.array(scenario.final_goal, dtype=float)
    sx, sy, syaw = scenario.start_pose
    traces: list[dict] = []

    try:
        pose = pose_on_terrain(terrain, sx, sy, syaw, scenario.footprint)
    except BoundsError:
        raise
    nav = NavigatorState()
    u = ControlInput(0.0, 0.0)
    records = []
    termination = "timeout"
    k = 0
    while True:
        t = k * sim.dt
        if math.hypot(goal[0] - pose.x, goal[1] - pose.y) <= scenario.goal_radius:
            termination = "reached"
            records.append((t, pose, ControlInput(0.0, 0.0)))
            break
        if abs(pose.roll) >= scenario.limits.roll_max or abs(pose.pitch) >= scenario.limits.pitch_max:
            termination = "attitude-violation"
            records.append((t, pose, ControlInput(0.0, 0.0)))
            break
        if k >= max_steps:
            termination = "timeout"
            records.append((t, pose, ControlInput(0.0, 0.0)))
            break
        if k % per_perception == 0:
            try:
                nav, trace = navigation_cycle(scenario, terrain, pose, nav, t, rng)
            except NoFeasibleSubgoalError as exc:
                trace = json.loads(str(exc))
                if trace_sink:
                    trace_sink(trace)
                if keep_traces:
                    traces.append(trace)
                termination = "no-subgoal"
                records.append((t, pose, ControlInput(0.0, 0.0)))
                break
            if trace_sink:
                trace_sink(trace)
            if keep_traces:
                traces.append(trace)
        if k % per_control == 0:
            u, nav = control_command(scenario, pose, nav)
        records.append((t, pose, u))
        try:
            pose = step_world(pose, u, terrain, sim.dt, scenario.footprint)
        except BoundsError:
            termination = "out-of-bounds"
            break
        k += 1

    log = TrajectoryLog.from_records(records)
    metrics = evaluate_trial(
        log, scenario.limits, goal, scenario.goal_radius, sim.max_sim_time, termination
    )
    return TrialResult(log, metrics, termination, traces)
