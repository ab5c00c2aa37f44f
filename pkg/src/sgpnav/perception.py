"""Occupancy-surface perception: pointcloud -> SGP occupancy model -> surfaces."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError
from .gp_core import Dataset, GPHyperparams, KernelParams
from .sparse_gp import SgpFitConfig, SparseGPModel, fit, predict

# starting point near where estimation settles for ground returns within the bounds below
DEFAULT_HYPER = GPHyperparams(KernelParams(signal_variance=1.0, lengthscale=0.12, mixture=5.0), 0.01)
MAX_FIT_SAMPLES = 2000
PAD_LENGTHSCALES = 3.0
MAX_PAD = 0.5  # rad; bounds the duplicated fraction when the lengthscale grows
# box for hyperparameter estimation, ordered (sigma^2, ell, gamma, noise); an
# unbounded lengthscale grows until the variance contrast above the beams is lost
HYPER_BOUNDS = ((0.5, 50.0), (0.03, 0.12), (0.5, 5.0), (1e-4, 0.1))


@dataclass(frozen=True)
class PointCloud:
    """Sensor-frame points (x forward, y left, z up), meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("pointcloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SurfaceSpec:
    r_oc: float = 7.0
    azimuth_bins: int = 360
    elevation_bins: int = 16
    azimuth_range: tuple[float, float] = (-math.pi, math.pi)
    elevation_range: tuple[float, float] = (math.radians(-15.0), math.radians(15.0))

    def __post_init__(self):
        if not (self.r_oc > 0 and math.isfinite(self.r_oc)):
            raise InvalidArgumentError("r_oc must be positive")
        if self.azimuth_bins < 2 or self.elevation_bins < 2:
            raise InvalidArgumentError("surface needs at least 2 bins per axis")
        lo, hi = self.elevation_range
        if not lo < hi:
            raise InvalidArgumentError("elevation range must be increasing")
        object.__setattr__(self, "azimuth_range", tuple(float(v) for v in self.azimuth_range))
        object.__setattr__(self, "elevation_range", (float(lo), float(hi)))

    @property
    def azimuth_step(self) -> float:
        a0, a1 = self.azimuth_range
        return (a1 - a0) / self.azimuth_bins

    @property
    def elevation_step(self) -> float:
        b0, b1 = self.elevation_range
        return (b1 - b0) / self.elevation_bins

    def azimuth_centers(self) -> np.ndarray:
        return self.azimuth_range[0] + (np.arange(self.azimuth_bins) + 0.5) * self.azimuth_step

    def elevation_centers(self) -> np.ndarray:
        return self.elevation_range[0] + (np.arange(self.elevation_bins) + 0.5) * self.elevation_step

    def azimuth_edges(self) -> np.ndarray:
        return self.azimuth_range[0] + np.arange(self.azimuth_bins + 1) * self.azimuth_step

    def grid_points(self) -> np.ndarray:
        """Bin centers as (azimuth_bins * elevation_bins, 2), azimuth-major."""
        a, b = np.meshgrid(self.azimuth_centers(), self.elevation_centers(), indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])


@dataclass(frozen=True)
class OccupancySamples:
    """Projected samples, one entry per kept point (input order preserved).

    ``skipped_origin`` counts points at the sensor origin, which have no
    direction and are dropped.
    """

    azimuth: np.ndarray
    elevation: np.ndarray
    occupancy: np.ndarray
    skipped_origin: int = 0

    def __len__(self) -> int:
        return self.occupancy.shape[0]

    def inputs(self) -> np.ndarray:
        return np.column_stack([self.azimuth, self.elevation])


@dataclass(frozen=True)
class SurfaceGrid:
    spec: SurfaceSpec
    occupancy_mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        shape = (self.spec.azimuth_bins, self.spec.elevation_bins)
        mean = np.asarray(self.occupancy_mean, dtype=float)
        var = np.asarray(self.variance, dtype=float)
        if mean.shape != shape or var.shape != shape:
            raise InvalidArgumentError(f"surface matrices must have shape {shape}")
        if np.any(var < 0):
            raise InvalidArgumentError("variance surface has negative entries")
        object.__setattr__(self, "occupancy_mean", mean)
        object.__setattr__(self, "variance", var)


def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + math.pi) % (2.0 * math.pi) - math.pi


def to_occupancy_samples(cloud: PointCloud, spec: SurfaceSpec) -> OccupancySamples:
    p = cloud.points
    r = np.linalg.norm(p, axis=1)
    at_origin = r == 0.0
    safe_r = np.where(at_origin, 1.0, r)
    azimuth = wrap_angle(np.arctan2(p[:, 1], p[:, 0]))
    elevation = np.arcsin(np.clip(p[:, 2] / safe_r, -1.0, 1.0))
    lo, hi = spec.elevation_range
    keep = ~at_origin & (r <= spec.r_oc) & (elevation >= lo) & (elevation < hi)
    return OccupancySamples(
        azimuth=azimuth[keep],
        elevation=elevation[keep],
        occupancy=spec.r_oc - r[keep],
        skipped_origin=int(at_origin.sum()),
    )


def pad_azimuth(inputs: np.ndarray, targets: np.ndarray, pad: float):
    """Duplicate samples within ``pad`` of the +-pi seam on the other side."""
    a = inputs[:, 0]
    hi = a > math.pi - pad
    lo = a < -math.pi + pad
    shifted_hi = inputs[hi] - [2.0 * math.pi, 0.0]
    shifted_lo = inputs[lo] + [2.0 * math.pi, 0.0]
    x = np.vstack([inputs, shifted_hi, shifted_lo])
    y = np.concatenate([targets, targets[hi], targets[lo]])
    return x, y


def occupancy_dataset(
    samples: OccupancySamples,
    lengthscale: float,
    seed: int = 0,
    max_samples: int = MAX_FIT_SAMPLES,
) -> Dataset:
    """Pad the seam, sort by azimuth, then subsample to ``max_samples`` (seeded).

    Padding first keeps the fitted set, duplicates included, within the
    per-cycle sample budget.
    """
    pad = min(PAD_LENGTHSCALES * lengthscale, MAX_PAD)
    x, y = pad_azimuth(samples.inputs(), samples.occupancy, pad)
    # azimuth order lets the stratified inducing draw cover the ring evenly
    order = np.argsort(x[:, 0], kind="stable")
    x, y = x[order], y[order]
    if len(y) > max_samples:
        idx = np.sort(np.random.default_rng(seed).choice(len(y), size=max_samples, replace=False))
        x, y = x[idx], y[idx]
    return Dataset(x, y)


def fit_occupancy_model(
    samples: OccupancySamples,
    cfg: SgpFitConfig,
    hyper_init: GPHyperparams = DEFAULT_HYPER,
    max_samples: int = MAX_FIT_SAMPLES,
) -> SparseGPModel:
    if len(samples) < 1:
        raise InvalidArgumentError("no occupancy samples to fit")
    hyper = cfg.warm_start.hyper if cfg.warm_start is not None else hyper_init
    data = occupancy_dataset(samples, hyper.kernel.lengthscale, cfg.seed, max_samples)
    warm = cfg.warm_start
    if warm is not None and warm.num_inducing > len(data):
        # too few samples to support the carried-over inducing set
        cfg = replace(cfg, warm_start=None)
    return fit(data, cfg, hyper)


def predict_surfaces(model: SparseGPModel, spec: SurfaceSpec) -> SurfaceGrid:
    pred = predict(model, spec.grid_points())
    shape = (spec.azimuth_bins, spec.elevation_bins)
    return SurfaceGrid(spec, pred.mean.reshape(shape), pred.variance.reshape(shape))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def read_xyz(path) -> PointCloud:
    """Plain-text XYZ rows in meters; '#' starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        vals = line.replace(",", " ").split()
        if len(vals) != 3:
            raise InvalidArgumentError(f"expected 3 coordinates per row, got {line!r}")
        rows.append([float(v) for v in vals])
    return PointCloud(np.array(rows, dtype=float).reshape(-1, 3))


def write_xyz(cloud: PointCloud, path, header: Optional[str] = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_surface_csv(grid: SurfaceGrid, path) -> None:
    lines = ["azimuth_bin,elevation_bin,mean,variance"]
    for i in range(grid.spec.azimuth_bins):
        for j in range(grid.spec.elevation_bins):
            lines.append(f"{i},{j},{float(grid.occupancy_mean[i, j])!r},{float(grid.variance[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_surface_csv(path, spec: SurfaceSpec) -> SurfaceGrid:
    shape = (spec.azimuth_bins, spec.elevation_bins)
    mean = np.zeros(shape)
    var = np.zeros(shape)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "azimuth_bin,elevation_bin,mean,variance":
        raise InvalidArgumentError("unexpected surface CSV header")
    for line in lines[1:]:
        if not line.strip():
            continue
        i, j, m, v = line.split(",")
        mean[int(i), int(j)] = float(m)
        var[int(i), int(j)] = float(v)
    return SurfaceGrid(spec, mean, var)
