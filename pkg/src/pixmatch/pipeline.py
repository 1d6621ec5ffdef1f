"""One-trajectory matching pipeline: rasterize, calibrate, search.

`match_one` runs the three stages with wall-clock timing per stage and
maps every recoverable failure to a stable status tag so batch callers
can aggregate failures without aborting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .calibrate import (CalibrationError, CalibrationMask, EmptyMaskError,
                        calibrate_deterministic, default_radius,
                        load_external_mask_file)
from .pathfind import (DEFAULT_COST_FRACTION, EmptyCandidateSetError,
                       MatchResult, NoFeasiblePathError, UnreachableEndError,
                       candidate_set, constrained_search, default_budget,
                       select_endpoints)
from .raster import (Georef, RasterError, RoadRaster, make_georef,
                     rasterize_roads, rasterize_trajectory)
from .roadnet import RoadNetwork
from .trajgen import CellularTrajectory, trajectory_length

STATUS_OK = "ok"
STATUS_EMPTY_MASK = "empty_mask"
STATUS_EMPTY_CANDIDATES = "empty_candidate_set"
STATUS_UNREACHABLE = "unreachable_end"
STATUS_NO_FEASIBLE = "no_feasible_path"
STATUS_RASTER_ERROR = "raster_error"
STATUS_CALIBRATION_ERROR = "calibration_error"

FAILURE_STATUSES = (STATUS_EMPTY_MASK, STATUS_EMPTY_CANDIDATES,
                    STATUS_UNREACHABLE, STATUS_NO_FEASIBLE,
                    STATUS_RASTER_ERROR, STATUS_CALIBRATION_ERROR)


@dataclass(frozen=True)
class MatchParams:
    """Knobs for the per-trajectory pipeline; defaults mirror the CLI."""
    width: int = 224
    buffer_m: float = 500.0
    radius_px: int | None = None  # None: derive from noise_sigma
    noise_sigma: float = 0.0
    cost_fraction: float = DEFAULT_COST_FRACTION
    relax: int = 0  # budget doublings to attempt after an infeasible search
    mask_dir: str | None = None  # external masks instead of the deterministic rule

    def __post_init__(self):
        if self.cost_fraction < 0:
            raise ValueError(f"negative cost fraction {self.cost_fraction}")
        if self.relax < 0:
            raise ValueError(f"negative relax count {self.relax}")


@dataclass(frozen=True)
class StageTimings:
    rasterize: float = 0.0
    calibrate: float = 0.0
    match: float = 0.0

    @property
    def total(self) -> float:
        return self.rasterize + self.calibrate + self.match


@dataclass(frozen=True)
class PipelineOutcome:
    traj_id: str
    status: str
    result: MatchResult | None
    timings: StageTimings
    budget: float = 0.0
    skipped_points: int = 0
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_record(self) -> dict:
        """Row for matches.jsonl."""
        r = self.result
        return {
            "traj_id": self.traj_id,
            "edges": list(r.edges) if r else [],
            "cost_m": r.cost if r else None,
            "length_m": r.length if r else None,
            "expanded_labels": r.expanded_labels if r else None,
            "runtime_s": self.timings.match,
            "status": self.status,
        }


def grid_filename(traj_id: str, channel: str) -> str:
    return f"{traj_id}_{channel}.pgm"


def mask_path(mask_dir, traj_id: str) -> Path:
    return Path(mask_dir) / grid_filename(traj_id, "mask")


def build_mask(traj_grid, road: RoadRaster, g: Georef,
               params: MatchParams, traj_id: str) -> CalibrationMask:
    if params.mask_dir is not None:
        mask, _ = load_external_mask_file(mask_path(params.mask_dir, traj_id),
                                          road.grid)
        return mask
    radius = params.radius_px
    if radius is None:
        radius = default_radius(params.noise_sigma, g)
    return calibrate_deterministic(traj_grid, road.grid, radius)


def match_one(traj: CellularTrajectory, net: RoadNetwork,
              params: MatchParams = MatchParams(), *,
              mask: CalibrationMask | None = None) -> PipelineOutcome:
    """Run rasterize, calibrate, match for one trajectory.

    A prebuilt ``mask`` (already intersected with the road channel and on
    the same grid) skips the calibrate stage; used by tests that inject a
    perfect-information mask.
    """
    timings = {"rasterize": 0.0, "calibrate": 0.0, "match": 0.0}

    def fail(status: str, exc: Exception, **extra) -> PipelineOutcome:
        return PipelineOutcome(traj.traj_id, status, None,
                               StageTimings(**timings), detail=str(exc), **extra)

    t0 = time.perf_counter()
    try:
        g = make_georef(traj, params.buffer_m, params.width)
        traj_grid, skipped = rasterize_trajectory(traj, g)
        road = rasterize_roads(net, g)
    except RasterError as exc:
        timings["rasterize"] = time.perf_counter() - t0
        return fail(STATUS_RASTER_ERROR, exc)
    timings["rasterize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if mask is None:
        try:
            mask = build_mask(traj_grid, road, g, params, traj.traj_id)
        except EmptyMaskError as exc:
            timings["calibrate"] = time.perf_counter() - t0
            return fail(STATUS_EMPTY_MASK, exc, skipped_points=skipped)
        except (CalibrationError, RasterError) as exc:
            timings["calibrate"] = time.perf_counter() - t0
            return fail(STATUS_CALIBRATION_ERROR, exc, skipped_points=skipped)
    timings["calibrate"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    budget = default_budget(trajectory_length(traj), params.cost_fraction)
    try:
        try:
            s_y = candidate_set(mask, net, g)
        except EmptyCandidateSetError as exc:
            timings["match"] = time.perf_counter() - t0
            return fail(STATUS_EMPTY_CANDIDATES, exc,
                        skipped_points=skipped, budget=budget)
        start_edge, end_edge = select_endpoints(s_y, traj, net)
        result = None
        attempt_budget = budget
        for attempt in range(params.relax + 1):
            try:
                result = constrained_search(net, s_y, start_edge, end_edge,
                                            attempt_budget, traj_id=traj.traj_id)
                break
            except NoFeasiblePathError:
                if attempt == params.relax:
                    raise
                attempt_budget *= 2.0
        budget = attempt_budget
    except NoFeasiblePathError as exc:
        timings["match"] = time.perf_counter() - t0
        return fail(STATUS_NO_FEASIBLE, exc, skipped_points=skipped, budget=budget)
    except UnreachableEndError as exc:
        timings["match"] = time.perf_counter() - t0
        return fail(STATUS_UNREACHABLE, exc, skipped_points=skipped, budget=budget)
    timings["match"] = time.perf_counter() - t0

    return PipelineOutcome(traj.traj_id, STATUS_OK, result,
                           StageTimings(**timings), budget=budget,
                           skipped_points=skipped)
