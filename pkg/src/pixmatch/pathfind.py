"""Candidate road selection and constrained bi-criteria path search.

A calibration mask induces a candidate set S_y: the edges whose endpoint
cells are both inside the mask.  The matcher then searches the road graph
for a connected edge path from a start edge to an end edge that minimizes
deviation cost (total length of edges outside S_y) subject to a budget,
breaking cost ties by geometric length and length ties by lexicographic
edge-id order.  An exhaustive depth-bounded enumerator with the identical
objective serves as the testing oracle.
"""

from __future__ import annotations

import heapq
import math
import time
from collections import deque
from dataclasses import dataclass, field

from .calibrate import CalibrationMask
from .raster import Georef
from .roadnet import GeoPoint, RoadNetwork, haversine
from .trajgen import CellularTrajectory

DEFAULT_COST_FRACTION = 0.03
DEFAULT_ORACLE_DEPTH = 14


class PathfindError(Exception):
    pass


class EmptyCandidateSetError(PathfindError):
    """No edge has both endpoint cells inside the mask; widen the radius."""


class DisconnectedPathError(PathfindError):
    pass


class UnreachableEndError(PathfindError):
    def __init__(self, start_edge: str, end_edge: str):
        super().__init__(f"end edge {end_edge!r} is not reachable from {start_edge!r}")
        self.start_edge = start_edge
        self.end_edge = end_edge


class NoFeasiblePathError(PathfindError):
    """Every connecting path exceeds the cost budget.

    Carries the cheapest achievable cost (and its edge sequence) so callers
    can decide whether relaxing the budget would help.
    """

    def __init__(self, budget: float, min_achievable_cost: float,
                 min_cost_edges: tuple[str, ...] = ()):
        super().__init__(
            f"no path within cost budget {budget:.3f} m; "
            f"cheapest achievable costs {min_achievable_cost:.3f} m")
        self.budget = budget
        self.min_achievable_cost = min_achievable_cost
        self.min_cost_edges = min_cost_edges


@dataclass(frozen=True)
class CandidateSet:
    """Road edges selected by a calibration mask (S_y)."""
    edges: frozenset[str]
    mask: CalibrationMask | None = None

    def __contains__(self, edge_id: str) -> bool:
        return edge_id in self.edges

    def __len__(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class PathLabel:
    """One search state: a path ending at ``edge``, linked via ``parent``."""
    edge: str
    cost: float
    length: float
    parent: "PathLabel | None" = None

    def __post_init__(self):
        if self.cost < 0:
            raise ValueError(f"negative cost {self.cost}")
        if not (self.length > 0):
            raise ValueError(f"non-positive length {self.length}")
        if self.cost > self.length:
            raise ValueError(f"cost {self.cost} exceeds length {self.length}")

    def sequence(self) -> tuple[str, ...]:
        out = []
        lab: PathLabel | None = self
        while lab is not None:
            out.append(lab.edge)
            lab = lab.parent
        out.reverse()
        return tuple(out)


@dataclass(frozen=True)
class MatchResult:
    traj_id: str
    edges: tuple[str, ...]
    cost: float
    length: float
    expanded_labels: int
    runtime: float = field(compare=False, default=0.0)


def candidate_set(mask: CalibrationMask, net: RoadNetwork, g: Georef) -> CandidateSet:
    """Edges whose from-node and to-node cells are both set in the mask."""
    if not net.edges:
        raise PathfindError("empty road network")
    if not mask.grid.georef.close_to(g):
        raise PathfindError("mask georeference does not match the requested window")
    coords = net.edge_coord_arrays()
    set_cells = mask.grid.values > 0
    width = g.width

    def cells_set(lons, lats):
        cols, rows = g.to_pixel_arrays(lons, lats)
        inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < width)
        ok = inside.copy()
        ok[inside] = set_cells[rows[inside], cols[inside]]
        return ok

    both = (cells_set(coords["from_lon"], coords["from_lat"])
            & cells_set(coords["to_lon"], coords["to_lat"]))
    selected = frozenset(coords["ids"][both].tolist())
    if not selected:
        raise EmptyCandidateSetError(
            "calibration mask selects no edge with both endpoints inside")
    return CandidateSet(selected, mask)


def _check_connected(path: list[str] | tuple[str, ...], net: RoadNetwork) -> None:
    if not path:
        raise DisconnectedPathError("empty path")
    for eid in path:
        if eid not in net.edges:
            raise DisconnectedPathError(f"unknown edge {eid!r}")
    for prev, nxt in zip(path, path[1:]):
        if net.edges[prev].to_node != net.edges[nxt].from_node:
            raise DisconnectedPathError(
                f"edges {prev!r} and {nxt!r} do not share a node")


def deviation_cost(path, s_y: CandidateSet, net: RoadNetwork) -> float:
    """Sum of lengths of path edges outside S_y; in-set edges cost nothing.

    Accumulates left to right so results are bit-identical to the search's
    incremental sums.
    """
    _check_connected(tuple(path), net)
    cost = 0.0
    for eid in path:
        if eid not in s_y:
            cost += net.edges[eid].length_m
    return cost


def select_endpoints(s_y: CandidateSet, traj: CellularTrajectory,
                     net: RoadNetwork) -> tuple[str, str]:
    """Candidate edges anchoring the search: start has its from-node nearest
    the first trajectory point, end has its to-node nearest the last.
    Distance ties go to the smaller edge id."""
    if not s_y.edges:
        raise EmptyCandidateSetError("cannot select endpoints from an empty candidate set")
    first = traj.samples[0].pos
    last = traj.samples[-1].pos

    def nearest(target: GeoPoint, node_of) -> str:
        best_edge = None
        best_key = None
        for eid in sorted(s_y.edges):
            d = haversine(net.node_pos(node_of(net.edges[eid])), target)
            key = (d, eid)
            if best_key is None or key < best_key:
                best_key = key
                best_edge = eid
        return best_edge

    start = nearest(first, lambda e: e.from_node)
    end = nearest(last, lambda e: e.to_node)
    return start, end


def _reachable(net: RoadNetwork, start_edge: str, end_edge: str) -> bool:
    if start_edge == end_edge:
        return True
    seen = {start_edge}
    queue = deque([start_edge])
    while queue:
        eid = queue.popleft()
        for succ in net.adjacency[eid]:
            if succ == end_edge:
                return True
            if succ not in seen:
                seen.add(succ)
                queue.append(succ)
    return False


def _edge_cost(net: RoadNetwork, s_y: CandidateSet, eid: str) -> float:
    return 0.0 if eid in s_y else net.edges[eid].length_m


def _better(cost_a: float, length_a: float, seq_a: tuple[str, ...],
            cost_b: float, length_b: float, seq_b: tuple[str, ...]) -> bool:
    """Strict total order: cost, then length, then edge-id sequence."""
    return (cost_a, length_a, seq_a) < (cost_b, length_b, seq_b)


def _on_chain(label: PathLabel, edge_id: str) -> bool:
    lab: PathLabel | None = label
    while lab is not None:
        if lab.edge == edge_id:
            return True
        lab = lab.parent
    return False


def constrained_search(net: RoadNetwork, s_y: CandidateSet, start_edge: str,
                       end_edge: str, budget: float, *, traj_id: str = "",
                       prune: bool = True) -> MatchResult:
    """Label-setting search for the cheapest connected path within budget.

    Labels are popped in (cost, length) order; at each edge a Pareto
    frontier over (cost, length) prunes dominated arrivals, and on exact
    (cost, length) ties only the lexicographically smallest prefix
    survives (equal-length sequences are never prefixes of one another,
    so prefix order carries to completions).  The search stops once the
    cheapest frontier entry costs more than the best completed path;
    equal-cost entries are still drained so length and lexicographic
    tie-breaks see every contender.

    With ``prune=False`` dominance is disabled and termination comes from
    restricting paths to distinct edges instead: a path revisiting an edge
    is dominated by its own prefix at the first visit, so the optimum is
    always edge-simple and the two modes agree in (cost, length).
    """
    for eid in (start_edge, end_edge):
        if eid not in net.edges:
            raise PathfindError(f"unknown edge {eid!r}")
    if budget < 0:
        raise PathfindError(f"negative cost budget {budget}")
    if not _reachable(net, start_edge, end_edge):
        raise UnreachableEndError(start_edge, end_edge)

    t0 = time.perf_counter()
    root = PathLabel(start_edge, _edge_cost(net, s_y, start_edge),
                     net.edges[start_edge].length_m)
    expanded = 0
    incumbent: PathLabel | None = None
    counter = 0
    heap: list[tuple[float, float, int, PathLabel]] = []
    frontier: dict[str, list[PathLabel]] = {}

    def admit(label: PathLabel) -> bool:
        """Check the label against its edge's Pareto frontier; install it
        and evict anything it dominates."""
        entries = frontier.setdefault(label.edge, [])
        for i, other in enumerate(entries):
            if other.cost <= label.cost and other.length <= label.length:
                if other.cost == label.cost and other.length == label.length:
                    if label.sequence() < other.sequence():
                        entries[i] = label
                        return True
                return False
        entries[:] = [o for o in entries
                      if not (label.cost <= o.cost and label.length <= o.length)]
        entries.append(label)
        return True

    def push(label: PathLabel) -> None:
        nonlocal counter
        if label.cost > budget:
            return
        if incumbent is not None and \
                (label.cost, label.length) > (incumbent.cost, incumbent.length):
            return
        if prune:
            if not admit(label):
                return
        elif label.parent is not None and _on_chain(label.parent, label.edge):
            return
        counter += 1
        heapq.heappush(heap, (label.cost, label.length, counter, label))

    push(root)
    while heap:
        cost, length, _, label = heap[0]
        if incumbent is not None and cost > incumbent.cost:
            break
        heapq.heappop(heap)
        if prune and not any(o is label for o in frontier.get(label.edge, ())):
            continue  # evicted by a later dominating arrival
        expanded += 1
        if label.edge == end_edge:
            if incumbent is None or _better(cost, length, label.sequence(),
                                            incumbent.cost, incumbent.length,
                                            incumbent.sequence()):
                incumbent = label
            # extensions revisit the end edge and lose every tie-break
            continue
        for succ in net.adjacency[label.edge]:
            push(PathLabel(succ, cost + _edge_cost(net, s_y, succ),
                           length + net.edges[succ].length_m, label))

    if incumbent is None:
        if math.isinf(budget):
            raise UnreachableEndError(start_edge, end_edge)
        best = constrained_search(net, s_y, start_edge, end_edge, math.inf,
                                  traj_id=traj_id)
        raise NoFeasiblePathError(budget, best.cost, best.edges)
    return MatchResult(traj_id, incumbent.sequence(), incumbent.cost,
                       incumbent.length, expanded, time.perf_counter() - t0)


def brute_force_search(net: RoadNetwork, s_y: CandidateSet, start_edge: str,
                       end_edge: str, budget: float,
                       max_depth: int = DEFAULT_ORACLE_DEPTH, *,
                       traj_id: str = "", bound: bool = True) -> MatchResult:
    """Exhaustive enumeration of connected edge sequences up to max_depth.

    Same objective and tie-breaks as constrained_search; kept independent
    of it so the two act as cross-checking routes.  ``bound=True`` skips
    extensions that provably cannot beat the incumbent (cost and length
    only ever grow); ``bound=False`` enumerates every sequence.
    """
    for eid in (start_edge, end_edge):
        if eid not in net.edges:
            raise PathfindError(f"unknown edge {eid!r}")
    if not _reachable(net, start_edge, end_edge):
        raise UnreachableEndError(start_edge, end_edge)

    t0 = time.perf_counter()
    visited = 0
    best: tuple[float, float, tuple[str, ...]] | None = None

    def walk(seq: list[str], cost: float, length: float) -> None:
        nonlocal best, visited
        visited += 1
        if seq[-1] == end_edge:
            cand = (cost, length, tuple(seq))
            if best is None or cand < best:
                best = cand
        if len(seq) >= max_depth:
            return
        for succ in net.adjacency[seq[-1]]:
            c = cost + _edge_cost(net, s_y, succ)
            l = length + net.edges[succ].length_m
            if c > budget:
                continue
            # equal (cost, length) must still descend: the lexicographic
            # tie-break can only be judged at a completed sequence
            if bound and best is not None and (c, l) > best[:2]:
                continue
            seq.append(succ)
            walk(seq, c, l)
            seq.pop()

    cost0 = _edge_cost(net, s_y, start_edge)
    if cost0 <= budget:
        walk([start_edge], cost0, net.edges[start_edge].length_m)
    if best is None:
        relaxed = brute_force_search(net, s_y, start_edge, end_edge, math.inf,
                                     max_depth, traj_id=traj_id, bound=bound) \
            if not math.isinf(budget) else None
        if relaxed is None:
            raise PathfindError(
                f"no path of at most {max_depth} edges reaches {end_edge!r}")
        raise NoFeasiblePathError(budget, relaxed.cost, relaxed.edges)
    cost, length, seq = best
    return MatchResult(traj_id, seq, cost, length, visited,
                       time.perf_counter() - t0)


def default_budget(traj_length_m: float,
                   fraction: float = DEFAULT_COST_FRACTION) -> float:
    """Cost budget as a fixed fraction of the trajectory's length."""
    if traj_length_m <= 0:
        raise PathfindError(f"non-positive trajectory length {traj_length_m}")
    return fraction * traj_length_m
