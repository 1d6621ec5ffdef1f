"""Color overlay rendering of pipeline grids for visual inspection.

Layers, bottom to top: dark background, road (yellow), calibration mask
(white), matched path (red), trajectory (cyan, brightness rising with
point order).  Output is binary PPM, written like the PGM grids with the
northernmost row first.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .raster import PixelGrid, RasterError

BACKGROUND = (24, 24, 32)
ROAD_COLOR = (230, 200, 40)
MASK_COLOR = (255, 255, 255)
PATH_COLOR = (220, 40, 40)


def _check_shapes(width: int, *grids: PixelGrid | None) -> None:
    for grid in grids:
        if grid is not None and grid.georef.width != width:
            raise RasterError("overlay grids have mismatched widths")


def render_overlay(road: PixelGrid | None = None,
                   mask: PixelGrid | None = None,
                   path: PixelGrid | None = None,
                   traj: PixelGrid | None = None) -> np.ndarray:
    """Compose the layers into an (width, width, 3) uint8 image, row 0 south."""
    present = [g for g in (road, mask, path, traj) if g is not None]
    if not present:
        raise RasterError("nothing to render")
    width = present[0].georef.width
    _check_shapes(width, road, mask, path, traj)

    img = np.empty((width, width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for grid, color in ((road, ROAD_COLOR), (mask, MASK_COLOR), (path, PATH_COLOR)):
        if grid is not None:
            img[grid.values > 0] = color
    if traj is not None:
        rows, cols = np.nonzero(traj.values)
        if rows.size:
            level = (64 + np.rint(191 * traj.values[rows, cols])).astype(np.uint8)
            img[rows, cols, 0] = 0
            img[rows, cols, 1] = level
            img[rows, cols, 2] = level
    return img


def write_ppm(img: np.ndarray, path) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise RasterError(f"expected (h, w, 3) uint8 image, got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    with open(Path(path), "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.flipud(img).tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of write_ppm; returns the image with row 0 south."""
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if not m:
        raise RasterError(f"not a binary PPM: {path}")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise RasterError(f"unsupported maxval {maxval}")
    pixels = np.frombuffer(data[m.end():], dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise RasterError(f"pixel payload is {pixels.size} bytes, expected {w * h * 3}")
    return np.flipud(pixels.reshape(h, w, 3)).copy()
