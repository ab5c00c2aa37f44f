"""Heightmap world: terrain queries, terrain-conforming pose and simulated LiDAR."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .control import ControlInput, integrate_motion
from .errors import BoundsError, DegenerateOriginError, InvalidArgumentError
from .perception import PointCloud
from .planner import WorldPose

TERRAIN_MAGIC = "# sgpnav terrain v1"
TERRAIN_FIELDS = "rows,cols,cell_size,origin_x,origin_y"
BISECTION_STEPS = 30
DEFAULT_FOOTPRINT = (0.67, 0.99)  # width, length (m)


@dataclass(frozen=True)
class TerrainHeightmap:
    """``heights[i, j]`` is the terrain height at (origin_x + j*c, origin_y + i*c)."""

    heights: np.ndarray
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=float)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise InvalidArgumentError("heightmap needs at least 2x2 cells")
        if not np.all(np.isfinite(h)):
            raise InvalidArgumentError("heightmap contains non-finite heights")
        if not (self.cell_size > 0 and math.isfinite(self.cell_size)):
            raise InvalidArgumentError("cell_size must be positive")
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "cell_size", float(self.cell_size))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max)."""
        rows, cols = self.heights.shape
        ox, oy = self.origin
        c = self.cell_size
        return ox, ox + (cols - 1) * c, oy, oy + (rows - 1) * c

    def contains(self, x, y) -> np.ndarray:
        x0, x1, y0, y1 = self.bounds
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)

    def heights_at(self, x, y, outside: float = np.nan) -> np.ndarray:
        """Vectorized bilinear interpolation; points outside get ``outside``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        rows, cols = self.heights.shape
        gx = (x - self.origin[0]) / self.cell_size
        gy = (y - self.origin[1]) / self.cell_size
        inside = (gx >= 0) & (gx <= cols - 1) & (gy >= 0) & (gy <= rows - 1)
        gx = np.where(inside, gx, 0.0)
        gy = np.where(inside, gy, 0.0)
        j = np.minimum(np.floor(gx).astype(np.intp), cols - 2)
        i = np.minimum(np.floor(gy).astype(np.intp), rows - 2)
        fx = gx - j
        fy = gy - i
        h = self.heights
        h00 = h[i, j]
        h01 = h[i, j + 1]
        h10 = h[i + 1, j]
        h11 = h[i + 1, j + 1]
        top = h00 + fx * (h01 - h00)
        bot = h10 + fx * (h11 - h10)
        out = top + fy * (bot - top)
        return np.where(inside, out, outside)


@dataclass(frozen=True)
class LidarSpec:
    beam_elevations: tuple[float, ...] = tuple(np.radians(np.linspace(-15.0, 15.0, 16)).tolist())
    azimuth_steps: int = 360
    max_range: float = 7.0
    mount_height: float = 0.7
    range_noise_std: float = 0.0

    def __post_init__(self):
        beams = tuple(float(b) for b in self.beam_elevations)
        if len(beams) < 1 or any(b2 < b1 for b1, b2 in zip(beams, beams[1:])):
            raise InvalidArgumentError("beam elevations must be non-empty and sorted ascending")
        if self.azimuth_steps < 1:
            raise InvalidArgumentError("azimuth_steps must be >= 1")
        if not (self.max_range > 0 and self.mount_height > 0 and self.range_noise_std >= 0):
            raise InvalidArgumentError("max_range and mount_height must be positive")
        object.__setattr__(self, "beam_elevations", beams)

    def validate_for(self, r_oc: float) -> None:
        if self.max_range < r_oc:
            raise InvalidArgumentError(f"LiDAR max_range {self.max_range} is below r_oc {r_oc}")

    def directions(self) -> np.ndarray:
        """Sensor-frame unit directions, (azimuth_steps * beams, 3), azimuth-major."""
        az = -math.pi + np.arange(self.azimuth_steps) * (2.0 * math.pi / self.azimuth_steps)
        el = np.asarray(self.beam_elevations)
        a, b = np.meshgrid(az, el, indexing="ij")
        cb = np.cos(b)
        return np.column_stack([(cb * np.cos(a)).ravel(), (cb * np.sin(a)).ravel(), np.sin(b).ravel()])


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    control_rate: float = 50.0
    perception_rate: float = 10.0
    max_sim_time: float = 120.0
    seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and self.max_sim_time > 0):
            raise InvalidArgumentError("dt and max_sim_time must be positive")
        for name in ("control_rate", "perception_rate"):
            rate = getattr(self, name)
            if not rate > 0:
                raise InvalidArgumentError(f"{name} must be positive")
            ratio = 1.0 / (rate * self.dt)
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise InvalidArgumentError(f"{name} must divide 1/dt exactly")

    def steps_per(self, rate: float) -> int:
        return int(round(1.0 / (rate * self.dt)))


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def height_at(terrain: TerrainHeightmap, x: float, y: float) -> float:
    if not (math.isfinite(x) and math.isfinite(y)) or not terrain.contains(x, y):
        raise BoundsError(f"({x:.3f}, {y:.3f}) is outside terrain bounds {terrain.bounds}")
    return float(terrain.heights_at(x, y))


def _footprint_points(x, y, yaw, footprint):
    w, l = footprint
    c, s = math.cos(yaw), math.sin(yaw)
    local = np.array([[l / 2, w / 2], [l / 2, -w / 2], [-l / 2, w / 2], [-l / 2, -w / 2]])
    px = x + c * local[:, 0] - s * local[:, 1]
    py = y + s * local[:, 0] + c * local[:, 1]
    return px, py


def attitude_from_normal(normal: np.ndarray, yaw: float) -> tuple[float, float]:
    """(roll, pitch) of a body with heading ``yaw`` resting on a plane with ``normal``.

    Z-Y-X convention; positive pitch is nose-down.
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if n[2] < 0:
        n = -n
    c, s = math.cos(yaw), math.sin(yaw)
    # normal in the yaw-aligned frame
    hx = c * n[0] + s * n[1]
    hy = -s * n[0] + c * n[1]
    hz = n[2]
    roll = math.asin(max(-1.0, min(1.0, -hy)))
    pitch = math.atan2(hx, hz)
    return roll, pitch


def pose_on_terrain(
    terrain: TerrainHeightmap,
    x: float,
    y: float,
    yaw: float,
    footprint: tuple[float, float] = DEFAULT_FOOTPRINT,
    clearance: float = 0.0,
) -> WorldPose:
    px, py = _footprint_points(x, y, yaw, footprint)
    if not np.all(terrain.contains(px, py)) or not terrain.contains(x, y):
        raise BoundsError(f"footprint at ({x:.3f}, {y:.3f}) leaves the terrain")
    pz = terrain.heights_at(px, py)
    a = np.column_stack([np.ones(4), px - x, py - y])
    coef, *_ = np.linalg.lstsq(a, pz, rcond=None)
    normal = np.array([-coef[1], -coef[2], 1.0])
    roll, pitch = attitude_from_normal(normal, yaw)
    z = height_at(terrain, x, y) + clearance
    return WorldPose(np.array([x, y, z]), yaw=yaw, roll=roll, pitch=pitch)


# ---------------------------------------------------------------------------
# Raycasting
# ---------------------------------------------------------------------------


def raycast_many(
    terrain: TerrainHeightmap,
    origin,
    directions: np.ndarray,
    max_range: float,
    step: Optional[float] = None,
) -> np.ndarray:
    """First-crossing ranges for rays sharing one origin; NaN for no hit.

    Fixed-step march at ``cell_size / 2`` followed by bisection on the
    bracketing interval. Samples outside the heightmap count as free space.
    """
    o = np.asarray(origin, dtype=float).reshape(3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    if not terrain.contains(o[0], o[1]):
        raise BoundsError("ray origin is outside the terrain")
    if o[2] <= height_at(terrain, o[0], o[1]):
        raise DegenerateOriginError("ray origin is at or below the terrain surface")
    if not max_range > 0:
        raise InvalidArgumentError("max_range must be positive")
    step = terrain.cell_size / 2.0 if step is None else float(step)
    ts = np.arange(1, int(math.ceil(max_range / step)) + 1) * step
    ts[-1] = max_range
    n_rays = d.shape[0]
    hit_hi = np.full(n_rays, np.nan)
    hit_lo = np.zeros(n_rays)
    pending = np.arange(n_rays)
    prev_t = 0.0
    # march in blocks of steps so finished rays drop out early
    block = 16
    for b0 in range(0, ts.size, block):
        if pending.size == 0:
            break
        tb = ts[b0 : b0 + block]
        dp = d[pending]
        px = o[0] + np.outer(dp[:, 0], tb)
        py = o[1] + np.outer(dp[:, 1], tb)
        pz = o[2] + np.outer(dp[:, 2], tb)
        below = pz <= terrain.heights_at(px, py, outside=-np.inf)
        any_hit = below.any(axis=1)
        k = below.argmax(axis=1)
        idx = pending[any_hit]
        kk = k[any_hit]
        hit_hi[idx] = tb[kk]
        lo_t = np.where(kk > 0, tb[np.maximum(kk - 1, 0)], prev_t)
        hit_lo[idx] = lo_t
        pending = pending[~any_hit]
        prev_t = tb[-1]
    done = ~np.isnan(hit_hi)
    lo = hit_lo[done]
    hi = hit_hi[done]
    dd = d[done]
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        p = o + dd * mid[:, None]
        below = p[:, 2] <= terrain.heights_at(p[:, 0], p[:, 1], outside=-np.inf)
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    out = np.full(n_rays, np.nan)
    out[done] = hi
    return out


def raycast(
    terrain: TerrainHeightmap,
    origin,
    direction,
    max_range: float,
) -> Optional[float]:
    d = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InvalidArgumentError("ray direction must be a unit vector")
    t = raycast_many(terrain, origin, d[None, :], max_range)[0]
    return None if np.isnan(t) else float(t)


def sensor_origin(pose: WorldPose, spec: LidarSpec) -> np.ndarray:
    return pose.position + pose.rotation() @ np.array([0.0, 0.0, spec.mount_height])


def sensor_pose(pose: WorldPose, spec: LidarSpec) -> WorldPose:
    return WorldPose(sensor_origin(pose, spec), yaw=pose.yaw, roll=pose.roll, pitch=pose.pitch)


def scan(
    terrain: TerrainHeightmap,
    pose: WorldPose,
    spec: LidarSpec,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Simulated sweep; points are returned in the sensor frame in (azimuth, beam) order."""
    d_sensor = spec.directions()
    rot = pose.rotation()
    origin = sensor_origin(pose, spec)
    t = raycast_many(terrain, origin, d_sensor @ rot.T, spec.max_range)
    hit = ~np.isnan(t)
    t = t[hit]
    if spec.range_noise_std > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        t = np.clip(t + rng.normal(0.0, spec.range_noise_std, t.size), 0.0, spec.max_range)
    return PointCloud(d_sensor[hit] * t[:, None])


def step_world(
    state: WorldPose,
    u: ControlInput,
    terrain: TerrainHeightmap,
    dt: float,
    footprint: tuple[float, float] = DEFAULT_FOOTPRINT,
) -> WorldPose:
    planar = integrate_motion(state, u, dt)
    return pose_on_terrain(terrain, planar.x, planar.y, planar.yaw, footprint)


# ---------------------------------------------------------------------------
# Terrain generators
# ---------------------------------------------------------------------------


def _grid(extent: Sequence[float], cell_size: float):
    x0, x1, y0, y1 = (float(v) for v in extent)
    if not (x1 > x0 and y1 > y0):
        raise InvalidArgumentError("terrain extent must be (x_min, x_max, y_min, y_max) increasing")
    cols = int(round((x1 - x0) / cell_size)) + 1
    rows = int(round((y1 - y0) / cell_size)) + 1
    xs = x0 + np.arange(cols) * cell_size
    ys = y0 + np.arange(rows) * cell_size
    gx, gy = np.meshgrid(xs, ys)
    return gx, gy, (x0, y0)


def flat_terrain(extent, cell_size: float = 0.2, height: float = 0.0) -> TerrainHeightmap:
    gx, _, origin = _grid(extent, cell_size)
    return TerrainHeightmap(np.full(gx.shape, float(height)), cell_size, origin)


def ramp_terrain(
    extent, cell_size: float = 0.2, slope: float = 0.2, start_x: float = 0.0, direction: float = 0.0
) -> TerrainHeightmap:
    """Plane rising at angle ``slope`` (rad) along heading ``direction`` past ``start_x``.

    With ``start_x`` set to -inf the whole map is a single plane through the origin.
    """
    gx, gy, origin = _grid(extent, cell_size)
    along = gx * math.cos(direction) + gy * math.sin(direction)
    rise = np.maximum(along - start_x, 0.0) if math.isfinite(start_x) else along
    h = rise * math.tan(slope)
    return TerrainHeightmap(h, cell_size, origin)


def gaussian_hills_terrain(
    extent,
    cell_size: float = 0.2,
    hills: Sequence[Sequence[float]] = (),
    random_hills: int = 0,
    height_range: tuple[float, float] = (0.5, 2.0),
    sigma_range: tuple[float, float] = (1.5, 4.0),
    seed: int = 0,
) -> TerrainHeightmap:
    """Sum of Gaussian bumps; each hill is (cx, cy, height, sigma).

    ``random_hills`` extra bumps are drawn from a seeded generator inside
    the extent.
    """
    gx, gy, origin = _grid(extent, cell_size)
    specs = [tuple(float(v) for v in h) for h in hills]
    if random_hills > 0:
        rng = np.random.default_rng(seed)
        x0, x1, y0, y1 = (float(v) for v in extent)
        for _ in range(random_hills):
            specs.append(
                (
                    rng.uniform(x0, x1),
                    rng.uniform(y0, y1),
                    rng.uniform(*height_range),
                    rng.uniform(*sigma_range),
                )
            )
    h = np.zeros(gx.shape)
    for cx, cy, amp, sig in specs:
        if not sig > 0:
            raise InvalidArgumentError("hill sigma must be positive")
        h += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * sig * sig))
    return TerrainHeightmap(h, cell_size, origin)


def valley_terrain(
    extent,
    cell_size: float = 0.2,
    depth: float = 2.0,
    half_width: float = 3.0,
    wall_slope: float = 0.6,
    axis: str = "x",
) -> TerrainHeightmap:
    """Flat-floored corridor along ``axis`` with sloped walls rising to ``depth``."""
    gx, gy, origin = _grid(extent, cell_size)
    lateral = np.abs(gy if axis == "x" else gx)
    rise = np.clip(lateral - half_width, 0.0, None) * math.tan(wall_slope)
    return TerrainHeightmap(np.minimum(rise, depth), cell_size, origin)


GENERATORS = {
    "flat": flat_terrain,
    "ramp": ramp_terrain,
    "gaussian_hills": gaussian_hills_terrain,
    "valley": valley_terrain,
}


def generate_terrain(kind: str, **kwargs) -> TerrainHeightmap:
    if kind not in GENERATORS:
        raise InvalidArgumentError(f"unknown terrain generator {kind!r}; choose from {sorted(GENERATORS)}")
    return GENERATORS[kind](**kwargs)


# ---------------------------------------------------------------------------
# Terrain file format
# ---------------------------------------------------------------------------


def write_terrain_csv(terrain: TerrainHeightmap, path) -> None:
    rows, cols = terrain.shape
    lines = [
        TERRAIN_MAGIC,
        TERRAIN_FIELDS,
        f"{rows},{cols},{terrain.cell_size!r},{terrain.origin[0]!r},{terrain.origin[1]!r}",
    ]
    lines += [",".join(repr(float(v)) for v in row) for row in terrain.heights]
    Path(path).write_text("\n".join(lines) + "\n")


def read_terrain_csv(path) -> TerrainHeightmap:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or lines[0].strip() != TERRAIN_MAGIC or lines[1].strip() != TERRAIN_FIELDS:
        raise InvalidArgumentError(f"{path}: not a terrain CSV (bad header)")
    fields = lines[2].split(",")
    rows, cols = int(fields[0]), int(fields[1])
    cell, ox, oy = (float(v) for v in fields[2:5])
    body = [ln for ln in lines[3:] if ln.strip()]
    if len(body) != rows:
        raise InvalidArgumentError(f"{path}: expected {rows} height rows, found {len(body)}")
    heights = np.array([[float(v) for v in ln.split(",")] for ln in body])
    if heights.shape != (rows, cols):
        raise InvalidArgumentError(f"{path}: height grid is {heights.shape}, header says {(rows, cols)}")
    return TerrainHeightmap(heights, cell, (ox, oy))
