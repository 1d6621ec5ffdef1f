"""Cellular trajectories and synthetic labeled datasets.

Ground truth comes from shortest routes between random node pairs on the road
network; tower observations are produced by interpolating positions along the
route and sampling a serving tower per position.  Every function is
deterministic under its seed (see rng module), so generated datasets are
byte-reproducible.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import json
import math
from dataclasses import dataclass

from .rng import Rng
from .roadnet import GeoPoint, RoadNetwork, haversine

# Serving-tower candidates per position; models the many-to-many ambiguity
# between towers and roads without scanning the whole tower set.
TOWER_CANDIDATES = 5


class TrajectoryError(Exception):
    pass


class PathGenerationError(Exception):
    pass


@dataclass(frozen=True)
class CellTowerSample:
    tower_id: str
    pos: GeoPoint
    t: float

    def __post_init__(self):
        if not math.isfinite(self.t):
            raise ValueError(f"non-finite timestamp {self.t}")


@dataclass(frozen=True)
class CellularTrajectory:
    traj_id: str
    samples: tuple[CellTowerSample, ...]

    def __post_init__(self):
        if len(self.samples) < 2:
            raise TrajectoryError(
                f"trajectory {self.traj_id!r} has fewer than 2 samples")
        for prev, cur in zip(self.samples, self.samples[1:]):
            if cur.t < prev.t:
                raise TrajectoryError(
                    f"trajectory {self.traj_id!r} timestamps decrease at t={cur.t}")
            if cur.tower_id == prev.tower_id:
                raise TrajectoryError(
                    f"trajectory {self.traj_id!r} has consecutive duplicate tower "
                    f"{cur.tower_id!r}")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class GroundTruthPath:
    traj_id: str
    edges: tuple[str, ...]


@dataclass(frozen=True)
class TowerSet:
    towers: tuple[tuple[str, GeoPoint], ...]

    def __post_init__(self):
        seen = set()
        for tid, _ in self.towers:
            if tid in seen:
                raise ValueError(f"duplicate tower_id {tid!r}")
            seen.add(tid)

    def __len__(self) -> int:
        return len(self.towers)


def validate_path(path: GroundTruthPath, net: RoadNetwork) -> None:
    """Raise if the path is empty, uses unknown edges, or breaks contiguity."""
    if not path.edges:
        raise TrajectoryError(f"path {path.traj_id!r} is empty")
    for eid in path.edges:
        if eid not in net.edges:
            raise TrajectoryError(f"path {path.traj_id!r} uses unknown edge {eid!r}")
    for cur, nxt in zip(path.edges, path.edges[1:]):
        if net.edges[nxt].from_node != net.edges[cur].to_node:
            raise TrajectoryError(
                f"path {path.traj_id!r} disconnected between {cur!r} and {nxt!r}")


def path_length_m(path: GroundTruthPath, net: RoadNetwork) -> float:
    total = 0.0
    for eid in path.edges:
        total += net.edges[eid].length_m
    return total


def _shortest_edge_path(net: RoadNetwork, origin: str, dest: str) -> list[str] | None:
    """Dijkstra over nodes; returns the edge sequence or None if unreachable.

    Ties broken on node id so results are platform-stable.
    """
    out_edges: dict[str, list[str]] = {}
    for eid in net.edges:
        out_edges.setdefault(net.edges[eid].from_node, []).append(eid)

    dist = {origin: 0.0}
    back: dict[str, str] = {}
    heap: list[tuple[float, str]] = [(0.0, origin)]
    done = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == dest:
            break
        for eid in out_edges.get(node, ()):
            edge = net.edges[eid]
            nd = d + edge.length_m
            if edge.to_node not in dist or nd < dist[edge.to_node]:
                dist[edge.to_node] = nd
                back[edge.to_node] = eid
                heapq.heappush(heap, (nd, edge.to_node))
    if dest not in done:
        return None
    path = []
    node = dest
    while node != origin:
        eid = back[node]
        path.append(eid)
        node = net.edges[eid].from_node
    path.reverse()
    return path or None


def generate_path(net: RoadNetwork, rng_seed: int, min_length: float,
                  traj_id: str = "path", max_retries: int = 100) -> GroundTruthPath:
    """Shortest route between random node pairs, retried until long enough.

    Shortest routes have no chords (no edge directly connecting two
    non-consecutive route nodes can be cheaper), which keeps the ground truth
    unambiguous for matching.
    """
    if not net.edges:
        raise PathGenerationError("network has no edges")
    rng = Rng(rng_seed)
    node_ids = sorted(net.nodes)
    for _ in range(max_retries):
        origin = rng.choice(node_ids)
        dest = rng.choice(node_ids)
        if origin == dest:
            continue
        edge_path = _shortest_edge_path(net, origin, dest)
        if edge_path is None:
            continue
        path = GroundTruthPath(traj_id, tuple(edge_path))
        if path_length_m(path, net) >= min_length:
            return path
    raise PathGenerationError(
        f"no path of length >= {min_length} m found in {max_retries} retries")


def _path_polyline(path: GroundTruthPath, net: RoadNetwork) -> list[GeoPoint]:
    pts = [net.node_pos(net.edges[path.edges[0]].from_node)]
    for eid in path.edges:
        pts.append(net.node_pos(net.edges[eid].to_node))
    return pts


def sample_positions(path: GroundTruthPath, net: RoadNetwork,
                     speed: float, interval: float) -> list[tuple[GeoPoint, float]]:
    """Arc-length interpolation along the path polyline at speed*interval spacing.

    First point at the path start, last at the path end; timestamps are
    distance/speed.
    """
    if speed <= 0 or interval <= 0:
        raise ValueError("speed and interval must be positive")
    pts = _path_polyline(path, net)
    cum = [0.0]
    for a, b in zip(pts, pts[1:]):
        cum.append(cum[-1] + haversine(a, b))
    total = cum[-1]
    if total <= 0:
        raise TrajectoryError(f"path {path.traj_id!r} has zero geometric length")

    ds = speed * interval
    eps = 1e-9 * total
    targets = []
    s = 0.0
    i = 0
    while s <= total - eps:
        targets.append(s)
        i += 1
        s = i * ds
    targets.append(total)

    out = []
    for s in targets:
        k = bisect.bisect_right(cum, s) - 1
        if k >= len(pts) - 1:
            k = len(pts) - 2
        seg = cum[k + 1] - cum[k]
        frac = 0.0 if seg <= 0 else (s - cum[k]) / seg
        a, b = pts[k], pts[k + 1]
        pos = GeoPoint(a.lon + frac * (b.lon - a.lon),
                       a.lat + frac * (b.lat - a.lat))
        out.append((pos, s / speed))
    return out


def _select_tower(rng: Rng, pos: GeoPoint, towers: TowerSet,
                  noise_sigma: float) -> tuple[str, GeoPoint]:
    """Pick a serving tower: softmax over -d^2/(2 sigma^2) among the nearest
    TOWER_CANDIDATES towers; sigma=0 degenerates to the deterministic nearest.
    Distance ties break on tower id."""
    ranked = sorted(((haversine(pos, tp), tid, tp) for tid, tp in towers.towers),
                    key=lambda item: (item[0], item[1]))
    candidates = ranked[:TOWER_CANDIDATES]
    if noise_sigma <= 0:
        _, tid, tp = candidates[0]
        return tid, tp
    d2_min = candidates[0][0] ** 2
    weights = [math.exp(-(d * d - d2_min) / (2.0 * noise_sigma ** 2))
               for d, _, _ in candidates]
    idx = rng.choice_weighted(weights)
    _, tid, tp = candidates[idx]
    return tid, tp


def observe_towers(positions: list[tuple[GeoPoint, float]], towers: TowerSet,
                   noise_sigma: float, rng_seed: int,
                   traj_id: str = "traj") -> CellularTrajectory:
    """Tower observations for a position sequence, consecutive duplicates merged.

    The first sample of each run of identical serving towers is kept, matching
    handover logs that record a tower once per association.
    """
    if len(towers) == 0:
        raise ValueError("tower set is empty")
    rng = Rng(rng_seed)
    samples: list[CellTowerSample] = []
    for pos, t in positions:
        tid, tp = _select_tower(rng, pos, towers, noise_sigma)
        if samples and samples[-1].tower_id == tid:
            continue
        samples.append(CellTowerSample(tid, tp, t))
    if len(samples) < 2:
        raise TrajectoryError(
            f"trajectory {traj_id!r} has fewer than 2 samples after deduplication")
    return CellularTrajectory(traj_id, tuple(samples))


def trajectory_length(traj: CellularTrajectory) -> float:
    """Sum of haversine distances between consecutive tower positions."""
    total = 0.0
    for a, b in zip(traj.samples, traj.samples[1:]):
        total += haversine(a.pos, b.pos)
    return total


def scatter_towers(net: RoadNetwork, n_towers: int, rng_seed: int,
                   jitter_m: float = 200.0) -> TowerSet:
    """Place towers at random points along random edges with isotropic jitter.

    Tower siting correlates with roads, which is how real deployments look;
    jitter keeps towers off the exact centerline.
    """
    if not net.edges:
        raise ValueError("network has no edges")
    rng = Rng(rng_seed)
    edge_ids = list(net.edges)
    towers = []
    m_per_deg_lat = math.pi / 180.0 * 6_371_000.0
    for i in range(n_towers):
        eid = rng.choice(edge_ids)
        a, b = net.edge_endpoints(eid)
        frac = rng.random()
        lon = a.lon + frac * (b.lon - a.lon)
        lat = a.lat + frac * (b.lat - a.lat)
        ang = 2.0 * math.pi * rng.random()
        r = jitter_m * math.sqrt(rng.random())
        m_per_deg_lon = m_per_deg_lat * math.cos(math.radians(lat))
        lon += r * math.cos(ang) / m_per_deg_lon
        lat += r * math.sin(ang) / m_per_deg_lat
        towers.append((f"t{i:04d}", GeoPoint(lon, lat)))
    return TowerSet(tuple(towers))


# --- file formats ---------------------------------------------------------
# towers.csv: tower_id,lon,lat
# trajectories.jsonl: {"traj_id", "samples": [{"tower_id","lon","lat","t"}]}
# ground_truth.jsonl: {"traj_id", "edges": [edge_id]}

def write_towers_csv(path, towers: TowerSet) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tower_id", "lon", "lat"])
        for tid, pos in towers.towers:
            writer.writerow([tid, repr(pos.lon), repr(pos.lat)])


def load_towers_csv(path) -> TowerSet:
    towers = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["tower_id", "lon", "lat"]:
            raise ValueError(f"bad towers header {header}")
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            towers.append((row[0].strip(), GeoPoint(float(row[1]), float(row[2]))))
    return TowerSet(tuple(towers))


def write_trajectories_jsonl(path, trajs: list[CellularTrajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(json.dumps({
                "traj_id": traj.traj_id,
                "samples": [{"tower_id": s.tower_id, "lon": s.pos.lon,
                             "lat": s.pos.lat, "t": s.t} for s in traj.samples],
            }) + "\n")


def load_trajectories_jsonl(path) -> list[CellularTrajectory]:
    trajs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            samples = tuple(
                CellTowerSample(s["tower_id"], GeoPoint(s["lon"], s["lat"]), s["t"])
                for s in obj["samples"])
            trajs.append(CellularTrajectory(obj["traj_id"], samples))
    return trajs


def write_ground_truth_jsonl(path, paths: list[GroundTruthPath]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in paths:
            fh.write(json.dumps({"traj_id": p.traj_id, "edges": list(p.edges)}) + "\n")


def load_ground_truth_jsonl(path) -> dict[str, GroundTruthPath]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["traj_id"]] = GroundTruthPath(obj["traj_id"], tuple(obj["edges"]))
    return out
