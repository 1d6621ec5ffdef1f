"""Directed road networks: CSV loading, adjacency, geometric queries.

Edges are straight segments between their endpoint nodes; curved roads are
expected to be pre-split upstream.  Networks are immutable after load and safe
to share across worker processes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Stated lengths must agree with endpoint geometry to this relative tolerance
# unless the row carries a geometry override.
LENGTH_REL_TOL = 0.005


class NetworkError(Exception):
    pass


class NetworkFormatError(NetworkError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class DanglingNodeError(NetworkError):
    def __init__(self, node_id: str, edge_id: str):
        super().__init__(f"edge {edge_id!r} references unknown node {node_id!r}")
        self.node_id = node_id
        self.edge_id = edge_id


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} out of [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} out of [-90, 90]")


@dataclass(frozen=True)
class GeoWindow:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def contains(self, p: GeoPoint) -> bool:
        return (self.min_lon <= p.lon <= self.max_lon
                and self.min_lat <= p.lat <= self.max_lat)


@dataclass(frozen=True)
class RoadNode:
    node_id: str
    pos: GeoPoint


@dataclass(frozen=True)
class RoadEdge:
    edge_id: str
    from_node: str
    to_node: str
    length_m: float


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    s = (math.sin(dphi / 2.0) ** 2
         + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


class RoadNetwork:
    """Immutable directed road graph with successor adjacency.

    ``adjacency[e]`` lists the edges departing from ``to_node(e)``, in
    ascending edge-id order.  Edge iteration order everywhere follows
    ascending edge id for reproducibility.
    """

    def __init__(self, nodes: dict[str, RoadNode], edges: dict[str, RoadEdge]):
        for edge in edges.values():
            if edge.from_node not in nodes:
                raise DanglingNodeError(edge.from_node, edge.edge_id)
            if edge.to_node not in nodes:
                raise DanglingNodeError(edge.to_node, edge.edge_id)
            if not (edge.length_m > 0):
                raise NetworkFormatError(
                    f"edge {edge.edge_id!r} has non-positive length {edge.length_m}")
        self.nodes = dict(nodes)
        self.edges = {eid: edges[eid] for eid in sorted(edges)}
        by_from: dict[str, list[str]] = {}
        for eid, edge in self.edges.items():
            by_from.setdefault(edge.from_node, []).append(eid)
        self.adjacency: dict[str, tuple[str, ...]] = {
            eid: tuple(by_from.get(edge.to_node, ()))
            for eid, edge in self.edges.items()
        }
        self._edge_coords: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.edges)

    def successors(self, edge_id: str) -> list[str]:
        if edge_id not in self.adjacency:
            raise KeyError(f"unknown edge {edge_id!r}")
        return list(self.adjacency[edge_id])

    def node_pos(self, node_id: str) -> GeoPoint:
        return self.nodes[node_id].pos

    def edge_endpoints(self, edge_id: str) -> tuple[GeoPoint, GeoPoint]:
        e = self.edges[edge_id]
        return self.nodes[e.from_node].pos, self.nodes[e.to_node].pos

    def edge_coord_arrays(self) -> dict[str, np.ndarray]:
        """Cached per-edge endpoint coordinate arrays for vectorized queries.

        Keys: ``ids`` (object array of edge ids, ascending), ``from_lon``,
        ``from_lat``, ``to_lon``, ``to_lat``.  Built lazily; the network is
        immutable so the cache never invalidates.
        """
        if self._edge_coords is None:
            ids = list(self.edges)
            coords = {
                "ids": np.array(ids, dtype=object),
                "from_lon": np.empty(len(ids)),
                "from_lat": np.empty(len(ids)),
                "to_lon": np.empty(len(ids)),
                "to_lat": np.empty(len(ids)),
            }
            for i, eid in enumerate(ids):
                a, b = self.edge_endpoints(eid)
                coords["from_lon"][i] = a.lon
                coords["from_lat"][i] = a.lat
                coords["to_lon"][i] = b.lon
                coords["to_lat"][i] = b.lat
            self._edge_coords = coords
        return self._edge_coords

    def bounding_box(self) -> GeoWindow:
        lons = [n.pos.lon for n in self.nodes.values()]
        lats = [n.pos.lat for n in self.nodes.values()]
        return GeoWindow(min(lons), min(lats), max(lons), max(lats))


def successors(net: RoadNetwork, edge_id: str) -> list[str]:
    return net.successors(edge_id)


def _parse_float(raw: str, what: str, line_no: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise NetworkFormatError(f"bad {what} {raw!r}", line_no) from None
    if not math.isfinite(value):
        raise NetworkFormatError(f"non-finite {what} {raw!r}", line_no)
    return value


def load_network(nodes_path, edges_path) -> RoadNetwork:
    """Load a network from ``nodes.csv`` and ``edges.csv``.

    Missing edge lengths are filled in from the haversine distance between
    endpoints; stated lengths are validated against it within 0.5% unless the
    row has a non-empty ``geometry`` column (polyline-accurate lengths from
    map exports are longer than the straight chord).
    """
    nodes: dict[str, RoadNode] = {}
    with open(nodes_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["node_id", "lon", "lat"]:
            raise NetworkFormatError(f"bad nodes header {header}", 1)
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 3:
                raise NetworkFormatError(f"expected 3 fields, got {len(row)}", line_no)
            node_id = row[0].strip()
            if not node_id:
                raise NetworkFormatError("empty node_id", line_no)
            if node_id in nodes:
                raise NetworkFormatError(f"duplicate node_id {node_id!r}", line_no)
            try:
                pos = GeoPoint(_parse_float(row[1], "lon", line_no),
                               _parse_float(row[2], "lat", line_no))
            except ValueError as exc:
                raise NetworkFormatError(str(exc), line_no) from None
            nodes[node_id] = RoadNode(node_id, pos)

    edges: dict[str, RoadEdge] = {}
    with open(edges_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["edge_id", "from_node", "to_node", "length_m"]
        if header is None or [h.strip() for h in header[:4]] != expected:
            raise NetworkFormatError(f"bad edges header {header}", 1)
        has_geometry = len(header) > 4 and header[4].strip() == "geometry"
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 4:
                raise NetworkFormatError(f"expected 4 fields, got {len(row)}", line_no)
            edge_id = row[0].strip()
            if not edge_id:
                raise NetworkFormatError("empty edge_id", line_no)
            if edge_id in edges:
                raise NetworkFormatError(f"duplicate edge_id {edge_id!r}", line_no)
            from_node, to_node = row[1].strip(), row[2].strip()
            for node_id in (from_node, to_node):
                if node_id not in nodes:
                    raise DanglingNodeError(node_id, edge_id)
            chord = haversine(nodes[from_node].pos, nodes[to_node].pos)
            raw_len = row[3].strip()
            if raw_len:
                length = _parse_float(raw_len, "length_m", line_no)
                if length <= 0:
                    raise NetworkFormatError(
                        f"non-positive length_m {length} for edge {edge_id!r}", line_no)
                geometry_override = has_geometry and len(row) > 4 and row[4].strip()
                if not geometry_override and chord > 0:
                    if abs(length - chord) > LENGTH_REL_TOL * chord:
                        raise NetworkFormatError(
                            f"edge {edge_id!r} length {length:.2f} m deviates more than "
                            f"0.5% from endpoint distance {chord:.2f} m", line_no)
            else:
                length = chord
                if length <= 0:
                    raise NetworkFormatError(
                        f"edge {edge_id!r} has coincident endpoints and no length", line_no)
            edges[edge_id] = RoadEdge(edge_id, from_node, to_node, length)

    return RoadNetwork(nodes, edges)


def clip_window(net: RoadNetwork, window: GeoWindow) -> RoadNetwork:
    """Subnetwork of edges with at least one endpoint inside the window.

    Both endpoints of every retained edge are kept as nodes; adjacency is
    recomputed over the retained edge set.
    """
    kept_edges: dict[str, RoadEdge] = {}
    kept_nodes: dict[str, RoadNode] = {}
    for eid, edge in net.edges.items():
        a = net.nodes[edge.from_node]
        b = net.nodes[edge.to_node]
        if window.contains(a.pos) or window.contains(b.pos):
            kept_edges[eid] = edge
            kept_nodes[a.node_id] = a
            kept_nodes[b.node_id] = b
    return RoadNetwork(kept_nodes, kept_edges)
