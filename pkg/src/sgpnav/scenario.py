"""Scenario configuration: YAML files with unit-suffixed keys."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import InvalidArgumentError, ScenarioValidationError
from .gp_core import GPHyperparams, KernelParams
from .perception import DEFAULT_HYPER, HYPER_BOUNDS, MAX_FIT_SAMPLES, SurfaceSpec
from .planner import CostWeights, RobotSpec, SafetyLimits
from .control import PidGains
from .segmentation import DEFAULT_V_TH
from .metrics import DEFAULT_GOAL_RADIUS
from .simulator import (
    DEFAULT_FOOTPRINT,
    LidarSpec,
    SimConfig,
    TerrainHeightmap,
    generate_terrain,
    read_terrain_csv,
)
from .sparse_gp import SgpFitConfig

_BOUND_KEYS = ("signal_variance_m2", "lengthscale_rad", "mixture", "noise_variance_m2")

# scenario key -> generator keyword
_TERRAIN_KEYS = {
    "extent_m": "extent",
    "cell_size_m": "cell_size",
    "height_m": "height",
    "slope_rad": "slope",
    "start_x_m": "start_x",
    "direction_rad": "direction",
    "random_hills": "random_hills",
    "height_range_m": "height_range",
    "sigma_range_m": "sigma_range",
    "seed": "seed",
    "depth_m": "depth",
    "half_width_m": "half_width",
    "wall_slope_rad": "wall_slope",
    "axis": "axis",
}


def terrain_from_spec(spec: dict, base_dir: Optional[str] = None) -> TerrainHeightmap:
    """Build a heightmap from a scenario ``terrain`` block (``file`` or ``generator`` + keys)."""
    spec = dict(spec)
    if "file" in spec:
        path = Path(spec["file"])
        if not path.is_absolute() and base_dir:
            path = Path(base_dir) / path
        return read_terrain_csv(path)
    kind = spec.pop("generator", None)
    if kind is None:
        raise ScenarioValidationError("terrain block needs either 'file' or 'generator'")
    kwargs = {}
    for key, value in spec.items():
        if key == "hills":
            try:
                kwargs["hills"] = [(h["x_m"], h["y_m"], h["height_m"], h["sigma_m"]) for h in value]
            except (TypeError, KeyError) as exc:
                raise ScenarioValidationError("each hill needs x_m, y_m, height_m and sigma_m") from exc
        elif key in _TERRAIN_KEYS:
            kwargs[_TERRAIN_KEYS[key]] = value
        else:
            raise ScenarioValidationError(f"unknown terrain key {key!r}")
    try:
        return generate_terrain(kind, **kwargs)
    except TypeError as exc:
        raise ScenarioValidationError(f"bad parameters for terrain {kind!r}: {exc}") from exc


@dataclass(frozen=True)
class Scenario:
    name: str
    terrain: dict
    start_pose: tuple[float, float, float]
    final_goal: tuple[float, float]
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    robot: RobotSpec = field(default_factory=RobotSpec)
    footprint: tuple[float, float] = DEFAULT_FOOTPRINT
    limits: SafetyLimits = field(default_factory=SafetyLimits)
    weights: CostWeights = field(default_factory=CostWeights)
    gains: PidGains = field(default_factory=PidGains)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    sgp: SgpFitConfig = field(default_factory=lambda: SgpFitConfig(hyper_bounds=HYPER_BOUNDS))
    hyper_init: GPHyperparams = DEFAULT_HYPER
    v_th: float = DEFAULT_V_TH
    elev_tol: Optional[float] = None
    goal_radius: float = DEFAULT_GOAL_RADIUS
    max_samples: int = MAX_FIT_SAMPLES
    base_dir: Optional[str] = None

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, sim=replace(self.sim, seed=int(seed)))

    def build_terrain(self) -> TerrainHeightmap:
        return terrain_from_spec(self.terrain, self.base_dir)

    def validate(self, terrain: Optional[TerrainHeightmap] = None) -> TerrainHeightmap:
        terrain = self.build_terrain() if terrain is None else terrain
        try:
            self.lidar.validate_for(self.surface.r_oc)
        except InvalidArgumentError as exc:
            raise ScenarioValidationError(str(exc)) from exc
        sx, sy, _ = self.start_pose
        gx, gy = self.final_goal
        if not terrain.contains(sx, sy):
            raise ScenarioValidationError(f"start ({sx}, {sy}) is outside the terrain {terrain.bounds}")
        if not terrain.contains(gx, gy):
            raise ScenarioValidationError(f"goal ({gx}, {gy}) is outside the terrain {terrain.bounds}")
        if not self.goal_radius > 0:
            raise ScenarioValidationError("goal_radius_m must be positive")
        if not 0 < self.v_th < 1:
            raise ScenarioValidationError("v_th must lie in (0, 1)")
        return terrain

    def to_dict(self) -> dict:
        s, r, lim, w, g, ld, sim, sgp, h = (
            self.surface, self.robot, self.limits, self.weights, self.gains,
            self.lidar, self.sim, self.sgp, self.hyper_init,
        )
        out = {
            "name": self.name,
            "terrain": copy.deepcopy(self.terrain),
            "start_pose": {"x_m": self.start_pose[0], "y_m": self.start_pose[1], "yaw_rad": self.start_pose[2]},
            "final_goal": {"x_m": self.final_goal[0], "y_m": self.final_goal[1]},
            "goal_radius_m": self.goal_radius,
            "surface": {
                "r_oc_m": s.r_oc,
                "azimuth_bins": s.azimuth_bins,
                "elevation_bins": s.elevation_bins,
                "elevation_min_rad": s.elevation_range[0],
                "elevation_max_rad": s.elevation_range[1],
            },
            "segmentation": {"v_th": self.v_th, "elev_tol_rad": self.elev_tol},
            "robot": {
                "width_m": r.width,
                "safety_margin_m": r.safety_margin,
                "footprint_width_m": self.footprint[0],
                "footprint_length_m": self.footprint[1],
            },
            "limits": {
                "roll_max_rad": lim.roll_max,
                "pitch_max_rad": lim.pitch_max,
                "slope_height_range_m": None if lim.slope_height_range is None else list(lim.slope_height_range),
            },
            "weights": {"k_dir": w.k_dir, "k_dst": w.k_dst, "k_stp": w.k_stp, "spread_floor": list(w.spread_floor)},
            "gains": {
                "kp_dist": g.kp_dist, "ki_dist": g.ki_dist, "kd_dist": g.kd_dist,
                "kp_yaw": g.kp_yaw, "ki_yaw": g.ki_yaw, "kd_yaw": g.kd_yaw,
                "v_max_mps": g.v_max, "omega_max_radps": g.omega_max, "integral_limit": g.integral_limit,
            },
            "lidar": {
                "beam_elevations_rad": list(ld.beam_elevations),
                "azimuth_steps": ld.azimuth_steps,
                "max_range_m": ld.max_range,
                "mount_height_m": ld.mount_height,
                "range_noise_std_m": ld.range_noise_std,
            },
            "sim": {
                "dt_s": sim.dt,
                "control_rate_hz": sim.control_rate,
                "perception_rate_hz": sim.perception_rate,
                "max_sim_time_s": sim.max_sim_time,
                "seed": sim.seed,
            },
            "sgp": {
                "num_inducing": sgp.num_inducing,
                "max_iterations": sgp.max_iterations,
                "convergence_tol": sgp.convergence_tol,
                "max_samples": self.max_samples,
                "signal_variance_m2": h.kernel.signal_variance,
                "lengthscale_rad": h.kernel.lengthscale,
                "mixture": h.kernel.mixture,
                "noise_variance_m2": h.noise_variance,
                "hyper_bounds": None
                if sgp.hyper_bounds is None
                else dict(zip(_BOUND_KEYS, (list(b) for b in sgp.hyper_bounds))),
            },
        }
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


class _Section:
    """Reads one mapping, tracking which keys were consumed."""

    def __init__(self, name: str, data: Any):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ScenarioValidationError(f"section {name!r} must be a mapping")
        self.name = name
        self.data = data
        self.used: set[str] = set()

    def get(self, key: str, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def require(self, key: str):
        if key not in self.data:
            raise ScenarioValidationError(f"section {self.name!r} is missing {key!r}")
        return self.get(key)

    def finish(self) -> None:
        extra = set(self.data) - self.used
        if extra:
            raise ScenarioValidationError(f"unknown keys in {self.name!r}: {sorted(extra)}")


def _angle_range(sec: _Section, stem: str, default: tuple[float, float]) -> tuple[float, float]:
    lo_rad, hi_rad = sec.get(f"{stem}_min_rad"), sec.get(f"{stem}_max_rad")
    lo_deg, hi_deg = sec.get(f"{stem}_min_deg"), sec.get(f"{stem}_max_deg")
    lo = lo_rad if lo_rad is not None else (math.radians(lo_deg) if lo_deg is not None else default[0])
    hi = hi_rad if hi_rad is not None else (math.radians(hi_deg) if hi_deg is not None else default[1])
    return float(lo), float(hi)


def scenario_from_dict(data: dict, base_dir: Optional[str] = None) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioValidationError("scenario must be a mapping")
    top = _Section("scenario", data)
    try:
        name = str(top.get("name", "scenario"))
        terrain = top.require("terrain")
        if not isinstance(terrain, dict):
            raise ScenarioValidationError("terrain must be a mapping")

        sp = _Section("start_pose", top.require("start_pose"))
        start = (float(sp.require("x_m")), float(sp.require("y_m")), float(sp.get("yaw_rad", 0.0)))
        sp.finish()
        fg = _Section("final_goal", top.require("final_goal"))
        goal = (float(fg.require("x_m")), float(fg.require("y_m")))
        fg.finish()

        d = SurfaceSpec()
        su = _Section("surface", top.get("surface"))
        surface = SurfaceSpec(
            r_oc=float(su.get("r_oc_m", d.r_oc)),
            azimuth_bins=int(su.get("azimuth_bins", d.azimuth_bins)),
            elevation_bins=int(su.get("elevation_bins", d.elevation_bins)),
            elevation_range=_angle_range(su, "elevation", d.elevation_range),
        )
        su.finish()

        se = _Section("segmentation", top.get("segmentation"))
        v_th = float(se.get("v_th", DEFAULT_V_TH))
        elev_tol = se.get("elev_tol_rad")
        elev_tol = None if elev_tol is None else float(elev_tol)
        se.finish()

        rb = _Section("robot", top.get("robot"))
        robot = RobotSpec(float(rb.get("width_m", 0.67)), float(rb.get("safety_margin_m", 0.17)))
        footprint = (
            float(rb.get("footprint_width_m", DEFAULT_FOOTPRINT[0])),
            float(rb.get("footprint_length_m", DEFAULT_FOOTPRINT[1])),
        )
        rb.finish()

        li = _Section("limits", top.get("limits"))
        shr = li.get("slope_height_range_m")
        limits = SafetyLimits(
            float(li.get("roll_max_rad", 0.524)),
            float(li.get("pitch_max_rad", 0.785)),
            None if shr is None else (float(shr[0]), float(shr[1])),
        )
        li.finish()

        we = _Section("weights", top.get("weights"))
        dw = CostWeights()
        weights = CostWeights(
            float(we.get("k_dir", dw.k_dir)),
            float(we.get("k_dst", dw.k_dst)),
            float(we.get("k_stp", dw.k_stp)),
            tuple(float(v) for v in we.get("spread_floor", dw.spread_floor)),
        )
        we.finish()

        ga = _Section("gains", top.get("gains"))
        dg = PidGains()
        gains = PidGains(
            kp_dist=float(ga.get("kp_dist", dg.kp_dist)),
            ki_dist=float(ga.get("ki_dist", dg.ki_dist)),
            kd_dist=float(ga.get("kd_dist", dg.kd_dist)),
            kp_yaw=float(ga.get("kp_yaw", dg.kp_yaw)),
            ki_yaw=float(ga.get("ki_yaw", dg.ki_yaw)),
            kd_yaw=float(ga.get("kd_yaw", dg.kd_yaw)),
            v_max=float(ga.get("v_max_mps", dg.v_max)),
            omega_max=float(ga.get("omega_max_radps", dg.omega_max)),
            integral_limit=float(ga.get("integral_limit", dg.integral_limit)),
        )
        ga.finish()

        ld = _Section("lidar", top.get("lidar"))
        dl = LidarSpec()
        beams = ld.get("beam_elevations_rad")
        if beams is None:
            n_beams = ld.get("beams")
            if n_beams is not None:
                lo, hi = _angle_range(ld, "elevation", (dl.beam_elevations[0], dl.beam_elevations[-1]))
                beams = np.linspace(lo, hi, int(n_beams)).tolist()
            else:
                beams = dl.beam_elevations
        lidar = LidarSpec(
            beam_elevations=tuple(float(b) for b in beams),
            azimuth_steps=int(ld.get("azimuth_steps", dl.azimuth_steps)),
            max_range=float(ld.get("max_range_m", dl.max_range)),
            mount_height=float(ld.get("mount_height_m", dl.mount_height)),
            range_noise_std=float(ld.get("range_noise_std_m", dl.range_noise_std)),
        )
        ld.finish()

        si = _Section("sim", top.get("sim"))
        ds = SimConfig()
        sim = SimConfig(
            dt=float(si.get("dt_s", ds.dt)),
            control_rate=float(si.get("control_rate_hz", ds.control_rate)),
            perception_rate=float(si.get("perception_rate_hz", ds.perception_rate)),
            max_sim_time=float(si.get("max_sim_time_s", ds.max_sim_time)),
            seed=int(si.get("seed", ds.seed)),
        )
        si.finish()

        sg = _Section("sgp", top.get("sgp"))
        dc = SgpFitConfig()
        hb = sg.get("hyper_bounds", "default")
        if hb == "default":
            bounds = HYPER_BOUNDS
        elif hb is None:
            bounds = None
        else:
            hbs = _Section("sgp.hyper_bounds", hb)
            bounds = tuple(
                tuple(float(v) for v in hbs.get(k, d)) for k, d in zip(_BOUND_KEYS, HYPER_BOUNDS)
            )
            hbs.finish()
        sgp = SgpFitConfig(
            num_inducing=int(sg.get("num_inducing", dc.num_inducing)),
            max_iterations=int(sg.get("max_iterations", dc.max_iterations)),
            convergence_tol=float(sg.get("convergence_tol", dc.convergence_tol)),
            hyper_bounds=bounds,
        )
        dk = DEFAULT_HYPER
        hyper = GPHyperparams(
            KernelParams(
                float(sg.get("signal_variance_m2", dk.kernel.signal_variance)),
                float(sg.get("lengthscale_rad", dk.kernel.lengthscale)),
                float(sg.get("mixture", dk.kernel.mixture)),
            ),
            float(sg.get("noise_variance_m2", dk.noise_variance)),
        )
        max_samples = int(sg.get("max_samples", MAX_FIT_SAMPLES))
        sg.finish()

        goal_radius = float(top.get("goal_radius_m", DEFAULT_GOAL_RADIUS))
        top.finish()
    except ScenarioValidationError:
        raise
    except (InvalidArgumentError, TypeError, ValueError, KeyError, IndexError) as exc:
        raise ScenarioValidationError(f"invalid scenario: {exc}") from exc

    return Scenario(
        name=name,
        terrain=dict(terrain),
        start_pose=start,
        final_goal=goal,
        surface=surface,
        robot=robot,
        footprint=footprint,
        limits=limits,
        weights=weights,
        gains=gains,
        lidar=lidar,
        sim=sim,
        sgp=sgp,
        hyper_init=hyper,
        v_th=v_th,
        elev_tol=elev_tol,
        goal_radius=goal_radius,
        max_samples=max_samples,
        base_dir=base_dir,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioValidationError(f"{path}: not valid YAML: {exc}") from exc
    return scenario_from_dict(data, base_dir=str(path.parent))
