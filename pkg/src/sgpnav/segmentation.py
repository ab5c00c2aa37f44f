"""Variance-surface thresholding, border extraction and border segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateSurfaceError, InvalidArgumentError
from .perception import SurfaceGrid, SurfaceSpec

DEFAULT_V_TH = 0.7

# per-column border status codes
BORDER = 0
FULLY_FREE = 1
FULLY_OCCUPIED = 2


@dataclass(frozen=True)
class BorderCurve:
    """Per-azimuth-bin border elevation (rad) and status.

    ``elevation[i]`` is NaN unless ``status[i] == BORDER``.
    """

    elevation: np.ndarray
    status: np.ndarray

    def __post_init__(self):
        elev = np.asarray(self.elevation, dtype=float).reshape(-1)
        status = np.asarray(self.status, dtype=int).reshape(-1)
        if elev.shape != status.shape:
            raise InvalidArgumentError("elevation and status must have equal length")
        if not np.all(np.isin(status, (BORDER, FULLY_FREE, FULLY_OCCUPIED))):
            raise InvalidArgumentError("unknown border status code")
        if not np.all(np.isfinite(elev[status == BORDER])):
            raise InvalidArgumentError("border columns need a finite elevation")
        object.__setattr__(self, "elevation", elev)
        object.__setattr__(self, "status", status)

    def __len__(self) -> int:
        return self.status.shape[0]

    @classmethod
    def from_elevations(cls, elevation) -> "BorderCurve":
        """All-border curve; NaN entries become fully-occupied."""
        elev = np.asarray(elevation, dtype=float)
        status = np.where(np.isnan(elev), FULLY_OCCUPIED, BORDER)
        return cls(elev, status)


@dataclass(frozen=True)
class Segment:
    alpha_start: float
    alpha_end: float
    elevation: float
    height: float
    width: float

    def __post_init__(self):
        if not self.alpha_end > self.alpha_start:
            raise InvalidArgumentError("segment must satisfy alpha_start < alpha_end")
        if not self.width > 0:
            raise InvalidArgumentError("segment width must be positive")

    @property
    def alpha_mid(self) -> float:
        return 0.5 * (self.alpha_start + self.alpha_end)


def normalize_variance(grid: SurfaceGrid) -> SurfaceGrid:
    var = grid.variance
    lo, hi = float(var.min()), float(var.max())
    if not hi > lo:
        raise DegenerateSurfaceError("variance surface is constant")
    return SurfaceGrid(grid.spec, grid.occupancy_mean, (var - lo) / (hi - lo))


def extract_border(grid: SurfaceGrid, v_th: float = DEFAULT_V_TH) -> BorderCurve:
    """Longest-free-suffix border per azimuth column."""
    if not 0.0 < v_th < 1.0:
        raise InvalidArgumentError("v_th must lie in (0, 1)")
    free = grid.variance > v_th
    n_el = free.shape[1]
    # length of the free run ending at the top elevation bin
    occupied_rev = ~free[:, ::-1]
    suffix = np.where(occupied_rev.any(axis=1), occupied_rev.argmax(axis=1), n_el)
    status = np.full(free.shape[0], BORDER)
    status[suffix == n_el] = FULLY_FREE
    status[suffix == 0] = FULLY_OCCUPIED
    centers = grid.spec.elevation_centers()
    first = np.clip(n_el - suffix, 0, n_el - 1)
    elevation = np.where(status == BORDER, centers[first], np.nan)
    return BorderCurve(elevation, status)


def _group_runs(values: np.ndarray, broken: np.ndarray, tol: float) -> list[list[int]]:
    """Split bin indices into runs; a run ends at a broken bin or a step larger than ``tol``."""
    groups: list[list[int]] = []
    current: list[int] = []
    for i, (v, b) in enumerate(zip(values, broken)):
        if b:
            if current:
                groups.append(current)
            current = []
            continue
        if current and abs(v - values[current[-1]]) <= tol:
            current.append(i)
        else:
            if current:
                groups.append(current)
            current = [i]
    if current:
        groups.append(current)
    return groups


def segment_border(
    curve: BorderCurve,
    spec: SurfaceSpec,
    elev_tol: Optional[float] = None,
) -> list[Segment]:
    """Group adjacent azimuth bins of similar border elevation into segments.

    Neighbouring bins join a run when their border elevations differ by at
    most ``elev_tol``. Runs touching both ends of the azimuth range are
    merged across the seam when the two end bins agree.
    """
    n = len(curve)
    if n == 0:
        return []
    if n != spec.azimuth_bins:
        raise InvalidArgumentError("curve length does not match the surface spec")
    tol = spec.elevation_step if elev_tol is None else float(elev_tol)
    # bin centers one step apart must count as within one step
    tol *= 1.0 + 1e-9
    values = np.where(curve.status == FULLY_FREE, spec.elevation_range[1], curve.elevation)
    broken = curve.status == FULLY_OCCUPIED
    groups = _group_runs(values, broken, tol)
    if not groups:
        return []
    edges = spec.azimuth_edges()
    spans = [(g[0], g[-1] + 1, g) for g in groups]
    if len(groups) == 1 and len(groups[0]) == n:
        spans = [(0, n, groups[0])]
    elif (
        len(groups) > 1
        and groups[0][0] == 0
        and groups[-1][-1] == n - 1
        and abs(values[n - 1] - values[0]) <= tol
    ):
        last = groups[-1]
        merged = last + groups[0]
        spans = [(last[0], groups[0][-1] + 1 + n, merged)] + [
            (g[0], g[-1] + 1, g) for g in groups[1:-1]
        ]
    full = edges[-1] - edges[0]
    segments = []
    for start, stop, members in spans:
        a0 = edges[start]
        a1 = edges[stop] if stop <= n else edges[stop - n] + full
        elev = float(np.mean(values[members]))
        segments.append(
            Segment(
                alpha_start=float(a0),
                alpha_end=float(a1),
                elevation=elev,
                height=spec.r_oc * math.sin(elev),
                width=spec.r_oc * float(a1 - a0),
            )
        )
    segments.sort(key=lambda s: s.alpha_start)
    return segments


def write_segments_csv(segments: list[Segment], path) -> None:
    lines = ["alpha_start,alpha_end,elevation,height,width"]
    for s in segments:
        lines.append(f"{s.alpha_start!r},{s.alpha_end!r},{s.elevation!r},{s.height!r},{s.width!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_segments_csv(path) -> list[Segment]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "alpha_start,alpha_end,elevation,height,width":
        raise InvalidArgumentError("unexpected segment CSV header")
    out = []
    for line in lines[1:]:
        if line.strip():
            a0, a1, e, h, w = (float(v) for v in line.split(","))
            out.append(Segment(a0, a1, e, h, w))
    return out
