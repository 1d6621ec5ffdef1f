"""Calibrated pixel masks: distance-field baseline and external-mask loading.

The deterministic calibrator keeps every road cell within a pixel radius of
any occupied trajectory cell.  It is a stand-in with the same interface and
file formats as an externally trained calibrator, so the rest of the pipeline
does not care which produced the mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .raster import Georef, PixelGrid, _read_pgm_bytes, _sidecar_path
from .roadnet import GeoPoint


class CalibrationError(Exception):
    pass


class EmptyMaskError(CalibrationError):
    def __init__(self, message: str, min_radius_px: float | None = None):
        super().__init__(message)
        self.min_radius_px = min_radius_px


class GeorefMismatchError(CalibrationError):
    pass


@dataclass
class CalibrationMask:
    grid: PixelGrid
    source: str  # "deterministic" | "external"

    def __post_init__(self):
        if self.source not in ("deterministic", "external"):
            raise ValueError(f"unknown mask source {self.source!r}")
        if self.grid.channel != "mask":
            raise ValueError(f"mask grid has channel {self.grid.channel!r}")
        if not self.grid.values.any():
            raise EmptyMaskError("calibration mask has no cells set")


def calibrate_deterministic(traj_grid: PixelGrid, road_grid: PixelGrid,
                            radius_px: float) -> CalibrationMask:
    """Road cells within Euclidean pixel distance <= radius_px of any occupied
    trajectory cell, via an exact distance transform.

    Depends only on cell occupancy, never on the stored i/|T| magnitudes.
    """
    if not traj_grid.georef.close_to(road_grid.georef):
        raise GeorefMismatchError("trajectory and road grids have different georefs")
    if radius_px < 1:
        raise ValueError(f"radius_px must be >= 1, got {radius_px}")
    road = road_grid.values > 0
    if not road.any():
        raise CalibrationError("road grid is empty")
    occupied = traj_grid.values > 0
    if not occupied.any():
        raise CalibrationError("trajectory grid has no occupied cells")
    dist = ndimage.distance_transform_edt(~occupied)
    selected = road & (dist <= radius_px)
    if not selected.any():
        min_radius = float(dist[road].min())
        raise EmptyMaskError(
            f"no road cell within {radius_px} px of the trajectory; "
            f"minimum radius that would succeed: {min_radius:.3f} px",
            min_radius_px=min_radius)
    grid = PixelGrid(traj_grid.georef, "mask", selected.astype(np.float64),
                     traj_id=traj_grid.traj_id, n_points=traj_grid.n_points)
    return CalibrationMask(grid, "deterministic")


def load_external_mask(pgm_path, sidecar_path, road_grid: PixelGrid,
                       ) -> tuple[CalibrationMask, int]:
    """Load a mask produced elsewhere and intersect it with the road grid.

    Returns (mask, n_dropped) where n_dropped counts mask cells that were not
    road cells.  The mask georef must match the road grid's to 1e-9; sidecars
    are written by this toolkit, so only bit-drift is tolerated.
    """
    width, height, data = _read_pgm_bytes(pgm_path)
    meta = json.loads(Path(sidecar_path).read_text(encoding="utf-8"))
    georef = Georef(GeoPoint(meta["origin_lon"], meta["origin_lat"]),
                    meta["meters_per_pixel"], int(meta["width"]))
    if width != height or width != georef.width:
        raise GeorefMismatchError(
            f"{pgm_path}: PGM is {width}x{height} but sidecar width {georef.width}")
    if not georef.close_to(road_grid.georef):
        raise GeorefMismatchError(
            f"{pgm_path}: georef differs from road grid beyond 1e-9 "
            f"(origin {meta['origin_lon']}, {meta['origin_lat']}, "
            f"scale {meta['meters_per_pixel']})")
    binary = np.flipud(data) >= 128
    road = road_grid.values > 0
    kept = binary & road
    n_dropped = int(binary.sum() - kept.sum())
    if not kept.any():
        raise EmptyMaskError(
            f"{pgm_path}: mask empty after intersecting with road cells "
            f"({n_dropped} off-road cells dropped)")
    grid = PixelGrid(road_grid.georef, "mask", kept.astype(np.float64),
                     traj_id=meta.get("traj_id"), n_points=meta.get("n_points"))
    return CalibrationMask(grid, "external"), n_dropped


def load_external_mask_file(pgm_path, road_grid: PixelGrid) -> tuple[CalibrationMask, int]:
    """Convenience wrapper resolving the sidecar by naming convention."""
    return load_external_mask(pgm_path, _sidecar_path(pgm_path), road_grid)


def default_radius(noise_sigma: float, g: Georef) -> int:
    """Error-scaled mask radius: ceil(max(noise_sigma, 100 m) / m-per-px),
    clamped to [1, width/2].  Cellular positioning error rarely drops below
    about 100 m, hence the floor."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    radius = math.ceil(max(noise_sigma, 100.0) / g.meters_per_pixel)
    return max(1, min(radius, g.width // 2))
