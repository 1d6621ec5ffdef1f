"""Command-line pipeline: synthesize, rasterize, calibrate, match, evaluate, render.

Every subcommand writes the exact RunConfig it used into the output
directory; re-running with the same flags reproduces the grid and JSONL
outputs byte for byte (the one exception is the wall-clock runtime_s
field inside matches.jsonl).  Exit codes: 0 clean, 1 when individual
items failed but the batch completed, 2 on fatal configuration errors.
Errors go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

from .calibrate import (CalibrationError, calibrate_deterministic,
                        default_radius, load_external_mask_file)
from .evalkit import (EvalReport, _stage_stats, format_summary,
                      score_outcome, summarize)
from .pathfind import MatchResult
from .pipeline import (STATUS_OK, MatchParams, PipelineOutcome, StageTimings,
                       grid_filename, mask_path, match_one)
from .raster import (M_PER_DEG_LAT, RasterError, make_georef, rasterize_edges,
                     rasterize_path, rasterize_roads, rasterize_trajectory,
                     read_grid, write_grid)
from .render import render_overlay, write_ppm
from .rng import derive_seed
from .roadnet import NetworkError, RoadNetwork, load_network
from .trajgen import (PathGenerationError, TrajectoryError, generate_path,
                      load_ground_truth_jsonl, load_trajectories_jsonl,
                      observe_towers, sample_positions, scatter_towers,
                      write_ground_truth_jsonl, write_towers_csv,
                      write_trajectories_jsonl)

EXIT_OK = 0
EXIT_ITEM_FAILURES = 1
EXIT_CONFIG_ERROR = 2


class CliError(Exception):
    """Fatal configuration or input error; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Reproducibility record serialized next to every command's outputs."""
    command: str
    width: int = 224
    buffer_m: float = 500.0
    radius_px: int | None = None
    noise_sigma: float = 0.0
    cost_fraction: float = 0.03
    relax: int = 0
    rng_seed: int = 42
    jobs: int = 1
    inputs: dict = field(default_factory=dict)
    out: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def write_run_config(out_dir, cfg: RunConfig) -> None:
    (Path(out_dir) / "run_config.json").write_text(cfg.to_json(), encoding="utf-8")


def emit_error(kind: str, message: str, **extra) -> None:
    obj = {"error": kind, "message": message}
    obj.update(extra)
    print(json.dumps(obj, sort_keys=True), file=sys.stderr)


def _load_net(args) -> RoadNetwork:
    try:
        return load_network(args.nodes, args.edges)
    except (NetworkError, OSError) as exc:
        raise CliError(f"cannot load network: {exc}") from exc


def _ensure_out(out) -> Path:
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _inputs(args, *names) -> dict:
    return {name: str(getattr(args, name)) for name in names
            if getattr(args, name, None) is not None}


# -- synth ------------------------------------------------------------------

def cmd_synth(args) -> int:
    net = _load_net(args)
    out = _ensure_out(args.out)
    towers = scatter_towers(net, args.towers, derive_seed(args.seed, 0))
    trajs, paths = [], []
    failures = 0
    for i in range(args.trajs):
        traj_id = f"t{i:04d}"
        try:
            path = generate_path(net, derive_seed(args.seed, i, 1),
                                 args.min_length, traj_id)
            positions = sample_positions(path, net, args.speed, args.interval)
            traj = observe_towers(positions, towers, args.noise_sigma,
                                  derive_seed(args.seed, i, 2), traj_id)
        except (PathGenerationError, TrajectoryError) as exc:
            emit_error("item", str(exc), traj_id=traj_id)
            failures += 1
            continue
        trajs.append(traj)
        paths.append(path)
    write_towers_csv(out / "towers.csv", towers)
    write_trajectories_jsonl(out / "trajectories.jsonl", trajs)
    write_ground_truth_jsonl(out / "ground_truth.jsonl", paths)
    write_run_config(out, RunConfig(
        "synth", noise_sigma=args.noise_sigma, rng_seed=args.seed,
        inputs=_inputs(args, "nodes", "edges"), out=str(out),
        extra={"towers": args.towers, "trajs": args.trajs,
               "speed": args.speed, "interval": args.interval,
               "min_length": args.min_length}))
    return EXIT_ITEM_FAILURES if failures else EXIT_OK


# -- gridnet ----------------------------------------------------------------

def cmd_gridnet(args) -> int:
    if args.rows < 2 or args.cols < 2:
        raise CliError("grid needs at least 2 rows and 2 columns")
    out = _ensure_out(args.out)
    dlat = args.spacing_m / M_PER_DEG_LAT
    dlon = args.spacing_m / (M_PER_DEG_LAT * math.cos(math.radians(args.origin_lat)))

    def node_id(r, c):
        return f"n{r:03d}_{c:03d}"

    with open(out / "nodes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "lon", "lat"])
        for r in range(args.rows):
            for c in range(args.cols):
                writer.writerow([node_id(r, c),
                                 repr(args.origin_lon + c * dlon),
                                 repr(args.origin_lat + r * dlat)])
    n_edges = 0
    with open(out / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edge_id", "from_node", "to_node", "length_m"])
        pairs = []
        for r in range(args.rows):
            for c in range(args.cols):
                if c + 1 < args.cols:
                    pairs.append(((r, c), (r, c + 1)))
                if r + 1 < args.rows:
                    pairs.append(((r, c), (r + 1, c)))
        for (r1, c1), (r2, c2) in pairs:
            a, b = node_id(r1, c1), node_id(r2, c2)
            # lengths left blank: the loader fills in haversine distances
            writer.writerow([f"e_{a}_{b}", a, b, ""])
            writer.writerow([f"e_{b}_{a}", b, a, ""])
            n_edges += 2
    write_run_config(out, RunConfig(
        "gridnet", out=str(out),
        extra={"rows": args.rows, "cols": args.cols,
               "spacing_m": args.spacing_m, "origin_lon": args.origin_lon,
               "origin_lat": args.origin_lat, "n_edges": n_edges}))
    return EXIT_OK


# -- rasterize --------------------------------------------------------------

def _load_trajs(path):
    try:
        return load_trajectories_jsonl(path)
    except (TrajectoryError, OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot load trajectories: {exc}") from exc


def cmd_rasterize(args) -> int:
    net = _load_net(args)
    trajs = _load_trajs(args.trajs)
    gt = {}
    if args.gt:
        try:
            gt = load_ground_truth_jsonl(args.gt)
        except (TrajectoryError, OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot load ground truth: {exc}") from exc
    out = _ensure_out(args.out)
    failures = 0
    for traj in trajs:
        try:
            g = make_georef(traj, args.buffer_m, args.width)
            traj_grid, _ = rasterize_trajectory(traj, g)
            road = rasterize_roads(net, g)
            write_grid(traj_grid, out / grid_filename(traj.traj_id, "trajectory"))
            write_grid(road.grid, out / grid_filename(traj.traj_id, "road"))
            if traj.traj_id in gt:
                write_grid(rasterize_path(gt[traj.traj_id], net, g),
                           out / grid_filename(traj.traj_id, "gt_path"))
        except RasterError as exc:
            emit_error("item", str(exc), traj_id=traj.traj_id)
            failures += 1
    write_run_config(out, RunConfig(
        "rasterize", width=args.width, buffer_m=args.buffer_m,
        inputs=_inputs(args, "nodes", "edges", "trajs", "gt"), out=str(out)))
    return EXIT_ITEM_FAILURES if failures else EXIT_OK


# -- calibrate --------------------------------------------------------------

def cmd_calibrate(args) -> int:
    grids = Path(args.grids)
    if not grids.is_dir():
        raise CliError(f"grid directory not found: {grids}")
    traj_files = sorted(grids.glob("*_trajectory.pgm"))
    if not traj_files:
        raise CliError(f"no *_trajectory.pgm files in {grids}")
    out = _ensure_out(args.out)
    failures = 0
    for traj_file in traj_files:
        traj_id = traj_file.name[:-len("_trajectory.pgm")]
        try:
            road_grid = read_grid(grids / grid_filename(traj_id, "road"))
            if args.mask_dir:
                src = mask_path(args.mask_dir, traj_id)
                mask, dropped = load_external_mask_file(src, road_grid)
                if dropped:
                    emit_error("info", f"dropped {dropped} off-road mask cells",
                               traj_id=traj_id)
            else:
                traj_grid = read_grid(traj_file)
                radius = args.radius_px
                if radius is None:
                    radius = default_radius(args.noise_sigma, traj_grid.georef)
                mask = calibrate_deterministic(traj_grid, road_grid, radius)
            write_grid(mask.grid, out / grid_filename(traj_id, "mask"))
        except (CalibrationError, RasterError, OSError) as exc:
            emit_error("item", str(exc), traj_id=traj_id)
            failures += 1
    write_run_config(out, RunConfig(
        "calibrate", radius_px=args.radius_px, noise_sigma=args.noise_sigma,
        inputs=_inputs(args, "grids", "mask_dir"), out=str(out)))
    return EXIT_ITEM_FAILURES if failures else EXIT_OK


# -- match ------------------------------------------------------------------

def cmd_match(args) -> int:
    net = _load_net(args)
    trajs = _load_trajs(args.trajs)
    out = _ensure_out(args.out)
    params = MatchParams(width=args.width, buffer_m=args.buffer_m,
                         radius_px=args.radius_px, noise_sigma=args.noise_sigma,
                         cost_fraction=args.cost_fraction, relax=args.relax,
                         mask_dir=args.masks)
    run = partial(match_one, net=net, params=params)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run, trajs, chunksize=8))
    else:
        outcomes = [run(t) for t in trajs]
    failures = 0
    with open(out / "matches.jsonl", "w", encoding="utf-8") as fh:
        for outcome in outcomes:  # input order regardless of worker count
            fh.write(json.dumps(outcome.to_record()) + "\n")
            if not outcome.ok:
                emit_error("item", outcome.detail, traj_id=outcome.traj_id,
                           status=outcome.status)
                failures += 1
    write_run_config(out, RunConfig(
        "match", width=args.width, buffer_m=args.buffer_m,
        radius_px=args.radius_px, noise_sigma=args.noise_sigma,
        cost_fraction=args.cost_fraction, relax=args.relax, jobs=args.jobs,
        inputs=_inputs(args, "nodes", "edges", "trajs", "masks"), out=str(out)))
    return EXIT_ITEM_FAILURES if failures else EXIT_OK


# -- eval -------------------------------------------------------------------

def _outcome_from_record(rec: dict) -> PipelineOutcome:
    status = rec.get("status", "")
    runtime = float(rec.get("runtime_s") or 0.0)
    timings = StageTimings(match=runtime)
    result = None
    if status == STATUS_OK:
        result = MatchResult(rec["traj_id"], tuple(rec["edges"]),
                             float(rec["cost_m"]), float(rec["length_m"]),
                             int(rec["expanded_labels"]), runtime)
    return PipelineOutcome(rec["traj_id"], status, result, timings)


def cmd_eval(args) -> int:
    net = _load_net(args)
    try:
        gt = load_ground_truth_jsonl(args.gt)
        records = [json.loads(line) for line in
                   Path(args.matches).read_text(encoding="utf-8").splitlines()
                   if line.strip()]
    except (TrajectoryError, OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot load inputs: {exc}") from exc
    out = _ensure_out(args.out)
    report = EvalReport()
    runtimes = []
    failures = 0
    for rec in records:
        try:
            outcome = _outcome_from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            emit_error("item", f"bad record: {exc}", traj_id=rec.get("traj_id"))
            failures += 1
            continue
        if outcome.ok and outcome.traj_id not in gt:
            emit_error("item", "no ground truth for trajectory",
                       traj_id=outcome.traj_id)
            failures += 1
            continue
        report.rows.append(score_outcome(outcome, gt.get(outcome.traj_id), net))
        if not outcome.ok:
            report.failure_counts[outcome.status] = \
                report.failure_counts.get(outcome.status, 0) + 1
        runtimes.append(outcome.timings.match)
    report.stage_stats = _stage_stats({"match": runtimes})
    (out / "report.csv").write_text(summarize(report), encoding="utf-8")
    (out / "report.json").write_text(
        json.dumps(report.aggregates(), indent=1, sort_keys=True) + "\n",
        encoding="utf-8")
    write_run_config(out, RunConfig(
        "eval", inputs=_inputs(args, "nodes", "edges", "matches", "gt"),
        out=str(out)))
    print(format_summary(report))
    return EXIT_ITEM_FAILURES if failures else EXIT_OK


# -- render -----------------------------------------------------------------

def cmd_render(args) -> int:
    grids = Path(args.grids)
    try:
        road = read_grid(grids / grid_filename(args.traj_id, "road"))
        traj = read_grid(grids / grid_filename(args.traj_id, "trajectory"))
        mask = None
        if args.masks:
            mask = read_grid(mask_path(args.masks, args.traj_id))
        path_grid = None
        if args.matches:
            if not (args.nodes and args.edges):
                raise CliError("--matches rendering needs --nodes and --edges")
            net = _load_net(args)
            rec = None
            for line in Path(args.matches).read_text(encoding="utf-8").splitlines():
                if line.strip() and json.loads(line).get("traj_id") == args.traj_id:
                    rec = json.loads(line)
                    break
            if rec is None or rec.get("status") != STATUS_OK:
                emit_error("info", "no matched path to draw", traj_id=args.traj_id)
            else:
                path_grid = rasterize_edges(rec["edges"], net, road.georef,
                                            channel="gt_path")
        img = render_overlay(road=road, mask=mask, path=path_grid, traj=traj)
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_ppm(img, out_path)
    except (RasterError, OSError) as exc:
        raise CliError(str(exc)) from exc
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pixmatch",
        description="Pixel-space map matching of cellular trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)

    net_flags = argparse.ArgumentParser(add_help=False)
    net_flags.add_argument("--nodes", required=True, help="nodes.csv path")
    net_flags.add_argument("--edges", required=True, help="edges.csv path")

    raster_flags = argparse.ArgumentParser(add_help=False)
    raster_flags.add_argument("--width", type=int, default=224)
    raster_flags.add_argument("--buffer-m", type=float, default=500.0)

    p = sub.add_parser("synth", parents=[net_flags],
                       help="generate towers, trajectories, and ground truth")
    p.add_argument("--towers", type=int, default=50)
    p.add_argument("--trajs", type=int, default=50)
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="tower selection noise scale in meters")
    p.add_argument("--speed", type=float, default=12.0, help="m/s along the path")
    p.add_argument("--interval", type=float, default=30.0, help="seconds between samples")
    p.add_argument("--min-length", type=float, default=1500.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gridnet", help="write a rectangular grid road network")
    p.add_argument("--rows", type=int, default=23)
    p.add_argument("--cols", type=int, default=23)
    p.add_argument("--spacing-m", type=float, default=200.0)
    p.add_argument("--origin-lon", type=float, default=120.0)
    p.add_argument("--origin-lat", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gridnet)

    p = sub.add_parser("rasterize", parents=[net_flags, raster_flags],
                       help="write per-trajectory channel grids")
    p.add_argument("--trajs", required=True, help="trajectories.jsonl path")
    p.add_argument("--gt", default=None, help="ground_truth.jsonl path")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("calibrate", help="produce calibration masks")
    p.add_argument("--grids", required=True, help="rasterize output directory")
    p.add_argument("--radius-px", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--mask-dir", default=None,
                   help="externally produced masks to validate and adopt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("match", parents=[net_flags, raster_flags],
                       help="match trajectories to road-id paths")
    p.add_argument("--trajs", required=True)
    p.add_argument("--masks", default=None, help="calibrate output directory")
    p.add_argument("--radius-px", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--cost-fraction", type=float, default=0.03)
    p.add_argument("--relax", type=int, default=0,
                   help="budget doublings to try after an infeasible search")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", parents=[net_flags],
                       help="score matches against ground truth")
    p.add_argument("--matches", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="color overlay PPM for one trajectory")
    p.add_argument("--grids", required=True)
    p.add_argument("--traj-id", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--matches", default=None)
    p.add_argument("--nodes", default=None)
    p.add_argument("--edges", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        emit_error("config", str(exc))
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
