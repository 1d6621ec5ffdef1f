"""Georeferenced W x W pixel grids and their bit-exact file encoding.

A grid window is square in a local equirectangular projection anchored at the
window center; row 0 is the south edge in memory.  Trajectory cells hold the
point's order fraction i/|T| (later points win shared cells), road and path
cells are binary, rasterized with integer Bresenham so grids are identical
across platforms.

File format: binary PGM (P5, maxval 255, rows north-first) plus a JSON
sidecar ``<name>.georef.json`` carrying the georeferencing.  Values quantize
to one byte via round(value * 255); bytes >= 128 count as set for binary
channels.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .roadnet import GeoPoint, RoadNetwork
from .trajgen import CellularTrajectory, GroundTruthPath

M_PER_DEG_LAT = math.pi / 180.0 * 6_371_000.0

CHANNELS = ("trajectory", "road", "mask", "gt_path")
BINARY_CHANNELS = ("road", "mask", "gt_path")


class RasterError(Exception):
    pass


class GridFileError(RasterError):
    pass


@dataclass(frozen=True)
class Georef:
    """Affine mapping between pixel cells and geographic coordinates.

    ``origin`` is the southwest corner; the longitude scale factor uses the
    window-center latitude, which is recoverable from origin + side length, so
    the sidecar only needs these three numbers plus the width.
    """
    origin: GeoPoint
    meters_per_pixel: float
    width: int = 224

    def __post_init__(self):
        if self.width < 16:
            raise ValueError(f"width {self.width} below minimum 16")
        if not (self.meters_per_pixel > 0):
            raise ValueError(f"meters_per_pixel must be positive, got {self.meters_per_pixel}")

    @property
    def side_m(self) -> float:
        return self.meters_per_pixel * self.width

    @property
    def center_lat(self) -> float:
        return self.origin.lat + (self.side_m / 2.0) / M_PER_DEG_LAT

    @property
    def m_per_deg_lon(self) -> float:
        return M_PER_DEG_LAT * math.cos(math.radians(self.center_lat))

    def to_pixel(self, p: GeoPoint) -> tuple[int, int]:
        """Floor projection to (col, row); out-of-window points map out of range."""
        x = (p.lon - self.origin.lon) * self.m_per_deg_lon
        y = (p.lat - self.origin.lat) * M_PER_DEG_LAT
        return (math.floor(x / self.meters_per_pixel),
                math.floor(y / self.meters_per_pixel))

    def to_pixel_arrays(self, lons: np.ndarray, lats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = (lons - self.origin.lon) * self.m_per_deg_lon
        y = (lats - self.origin.lat) * M_PER_DEG_LAT
        cols = np.floor(x / self.meters_per_pixel).astype(np.int64)
        rows = np.floor(y / self.meters_per_pixel).astype(np.int64)
        return cols, rows

    def from_pixel(self, col: int, row: int) -> GeoPoint:
        """Geographic position of the cell center."""
        x = (col + 0.5) * self.meters_per_pixel
        y = (row + 0.5) * self.meters_per_pixel
        return GeoPoint(self.origin.lon + x / self.m_per_deg_lon,
                        self.origin.lat + y / M_PER_DEG_LAT)

    def in_range(self, col: int, row: int) -> bool:
        return 0 <= col < self.width and 0 <= row < self.width

    def close_to(self, other: "Georef", tol: float = 1e-9) -> bool:
        return (self.width == other.width
                and abs(self.origin.lon - other.origin.lon) <= tol
                and abs(self.origin.lat - other.origin.lat) <= tol
                and abs(self.meters_per_pixel - other.meters_per_pixel) <= tol)


@dataclass
class PixelGrid:
    georef: Georef
    channel: str
    values: np.ndarray  # width x width float64 in [0,1], [row][col], row 0 south
    traj_id: str | None = None
    n_points: int | None = None

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        w = self.georef.width
        if self.values.shape != (w, w):
            raise ValueError(f"values shape {self.values.shape} != ({w}, {w})")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("grid values outside [0, 1]")
        if self.channel in BINARY_CHANNELS:
            if not np.isin(self.values, (0.0, 1.0)).all():
                raise ValueError(f"{self.channel} channel must be binary")

    def occupied_cells(self) -> np.ndarray:
        """(n, 2) array of [col, row] for nonzero cells, row-major order."""
        rows, cols = np.nonzero(self.values)
        return np.stack([cols, rows], axis=1)


def make_georef(traj: CellularTrajectory, buffer_m: float, width: int = 224) -> Georef:
    """Square window: trajectory bounding box + buffer, padded square about
    its center."""
    if buffer_m < 0:
        raise ValueError("buffer_m must be >= 0")
    lons = [s.pos.lon for s in traj.samples]
    lats = [s.pos.lat for s in traj.samples]
    lon_c = (min(lons) + max(lons)) / 2.0
    lat_c = (min(lats) + max(lats)) / 2.0
    m_per_deg_lon = M_PER_DEG_LAT * math.cos(math.radians(lat_c))
    ew = (max(lons) - min(lons)) * m_per_deg_lon
    ns = (max(lats) - min(lats)) * M_PER_DEG_LAT
    side = max(ew, ns) + 2.0 * buffer_m
    if side <= 0:
        raise RasterError(
            f"degenerate trajectory {traj.traj_id!r}: zero extent and zero buffer")
    origin = GeoPoint(lon_c - (side / 2.0) / m_per_deg_lon,
                      lat_c - (side / 2.0) / M_PER_DEG_LAT)
    return Georef(origin, side / width, width)


def rasterize_trajectory(traj: CellularTrajectory, g: Georef) -> tuple[PixelGrid, int]:
    """Trajectory channel: the cell containing point i holds i/|T| (1-based);
    the largest index wins shared cells.  Returns (grid, n_skipped)."""
    n = len(traj.samples)
    values = np.zeros((g.width, g.width))
    skipped = 0
    for i, sample in enumerate(traj.samples, start=1):
        col, row = g.to_pixel(sample.pos)
        if not g.in_range(col, row):
            skipped += 1
            continue
        values[row, col] = i / n
    if skipped == n:
        raise RasterError(f"all {n} points of {traj.traj_id!r} fall outside the window")
    grid = PixelGrid(g, "trajectory", values, traj_id=traj.traj_id, n_points=n)
    return grid, skipped


def bresenham(c0: int, r0: int, c1: int, r1: int) -> list[tuple[int, int]]:
    """Integer Bresenham cells from (c0,r0) to (c1,r1), endpoints included."""
    dc = abs(c1 - c0)
    dr = -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    cells = []
    while True:
        cells.append((c0, r0))
        if c0 == c1 and r0 == r1:
            return cells
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c0 += sc
        if e2 <= dc:
            err += dc
            r0 += sr


def _mark_edge_line(values: np.ndarray, g: Georef, a: GeoPoint, b: GeoPoint,
                    on_cell=None) -> None:
    """Mark the Bresenham line between the endpoint cells, in-range cells only.

    The line is walked from_node -> to_node for determinism; once it has been
    inside the grid and leaves again it cannot re-enter (the window is
    convex), so the walk stops there.
    """
    c0, r0 = g.to_pixel(a)
    c1, r1 = g.to_pixel(b)
    was_inside = False
    for col, row in bresenham(c0, r0, c1, r1):
        inside = g.in_range(col, row)
        if inside:
            was_inside = True
            values[row, col] = 1.0
            if on_cell is not None:
                on_cell(col, row)
        elif was_inside:
            break


@dataclass
class RoadRaster:
    """Road channel plus the cell -> edge-ids reverse index."""
    grid: PixelGrid
    cell_edges: dict[tuple[int, int], list[str]]


def rasterize_roads(net: RoadNetwork, g: Georef) -> RoadRaster:
    """Road channel: Bresenham line of every edge with an endpoint in-window.

    Edge selection is vectorized over the network's cached coordinate arrays;
    an empty network yields an all-zero grid.
    """
    values = np.zeros((g.width, g.width))
    cell_edges: dict[tuple[int, int], list[str]] = {}
    if not net.edges:
        return RoadRaster(PixelGrid(g, "road", values), cell_edges)

    coords = net.edge_coord_arrays()
    fc, fr = g.to_pixel_arrays(coords["from_lon"], coords["from_lat"])
    tc, tr = g.to_pixel_arrays(coords["to_lon"], coords["to_lat"])
    w = g.width
    from_in = (fc >= 0) & (fc < w) & (fr >= 0) & (fr < w)
    to_in = (tc >= 0) & (tc < w) & (tr >= 0) & (tr < w)
    selected = np.nonzero(from_in | to_in)[0]

    for i in selected:
        eid = coords["ids"][i]
        a, b = net.edge_endpoints(eid)

        def record(col, row, eid=eid):
            edges = cell_edges.setdefault((col, row), [])
            if not edges or edges[-1] != eid:
                edges.append(eid)

        _mark_edge_line(values, g, a, b, on_cell=record)
    return RoadRaster(PixelGrid(g, "road", values), cell_edges)


def rasterize_edges(edge_ids, net: RoadNetwork, g: Georef,
                    channel: str = "gt_path") -> PixelGrid:
    """Binary raster of an explicit edge subset (same marking rule as roads)."""
    values = np.zeros((g.width, g.width))
    for eid in edge_ids:
        a, b = net.edge_endpoints(eid)
        ac, ar = g.to_pixel(a)
        bc, br = g.to_pixel(b)
        if g.in_range(ac, ar) or g.in_range(bc, br):
            _mark_edge_line(values, g, a, b)
    return PixelGrid(g, channel, values)


def rasterize_path(path: GroundTruthPath, net: RoadNetwork, g: Georef) -> PixelGrid:
    grid = rasterize_edges(path.edges, net, g, channel="gt_path")
    grid.traj_id = path.traj_id
    return grid


# --- PGM + sidecar encoding ----------------------------------------------

def _sidecar_path(pgm_path) -> Path:
    p = Path(pgm_path)
    stem = p.name[:-len(p.suffix)] if p.suffix else p.name
    return p.with_name(stem + ".georef.json")


def quantize(values: np.ndarray) -> np.ndarray:
    """Byte image of a [0,1] grid: round(value * 255), half-to-even."""
    return np.rint(values * 255.0).astype(np.uint8)


def write_grid(grid: PixelGrid, pgm_path) -> None:
    pgm_path = Path(pgm_path)
    data = quantize(grid.values)
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{grid.georef.width} {grid.georef.width}\n255\n".encode("ascii"))
        fh.write(np.flipud(data).tobytes())  # file rows run north -> south
    sidecar = {
        "origin_lon": grid.georef.origin.lon,
        "origin_lat": grid.georef.origin.lat,
        "meters_per_pixel": grid.georef.meters_per_pixel,
        "width": grid.georef.width,
        "channel": grid.channel,
        "traj_id": grid.traj_id,
        "n_points": grid.n_points,
    }
    _sidecar_path(pgm_path).write_text(json.dumps(sidecar, indent=1) + "\n",
                                       encoding="utf-8")


def _read_pgm_bytes(pgm_path) -> tuple[int, int, np.ndarray]:
    raw = Path(pgm_path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if m is None:
        raise GridFileError(f"{pgm_path}: not a binary PGM (bad magic/header)")
    width, height, maxval = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if maxval != 255:
        raise GridFileError(f"{pgm_path}: expected maxval 255, got {maxval}")
    payload = raw[m.end():]
    if len(payload) != width * height:
        raise GridFileError(
            f"{pgm_path}: payload size {len(payload)} != {width}x{height}")
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return width, height, data


def read_grid(pgm_path) -> PixelGrid:
    """Read a grid and its sidecar; binary channels threshold at byte >= 128."""
    width, height, data = _read_pgm_bytes(pgm_path)
    if width != height:
        raise GridFileError(f"{pgm_path}: non-square grid {width}x{height}")
    sidecar_file = _sidecar_path(pgm_path)
    if not sidecar_file.exists():
        raise GridFileError(f"missing sidecar {sidecar_file}")
    meta = json.loads(sidecar_file.read_text(encoding="utf-8"))
    if int(meta["width"]) != width:
        raise GridFileError(
            f"{pgm_path}: sidecar width {meta['width']} != PGM width {width}")
    georef = Georef(GeoPoint(meta["origin_lon"], meta["origin_lat"]),
                    meta["meters_per_pixel"], width)
    channel = meta["channel"]
    south_up = np.flipud(data)
    if channel in BINARY_CHANNELS:
        values = (south_up >= 128).astype(np.float64)
    else:
        values = south_up.astype(np.float64) / 255.0
    return PixelGrid(georef, channel, values,
                     traj_id=meta.get("traj_id"), n_points=meta.get("n_points"))
