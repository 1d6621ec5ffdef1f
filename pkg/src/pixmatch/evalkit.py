"""Segment-level scoring and batch benchmarking of matched paths.

Precision and recall compare edge SETS by length: repeated edges in a
path count once, and order never matters.  Dataset aggregates come in
two labeled flavors: macro (plain mean over trajectories) and
length-weighted (each metric weighted by its own denominator, which
makes the weighted ratios equal the pooled length ratios).
"""

from __future__ import annotations

import io
import csv
from dataclasses import dataclass, field

import numpy as np

from .pathfind import MatchResult
from .pipeline import MatchParams, PipelineOutcome, match_one
from .roadnet import RoadNetwork
from .trajgen import CellularTrajectory, GroundTruthPath

CSV_COLUMNS = ("traj_id", "status", "precision", "recall",
               "gt_length_m", "matched_length_m", "runtime_s")


class EvalError(Exception):
    pass


def _set_length(edge_ids, net: RoadNetwork) -> float:
    return sum(net.edges[eid].length_m for eid in sorted(set(edge_ids)))


def match_lengths(output_edges, gt_edges, net: RoadNetwork) -> tuple[float, float, float]:
    """(correctly matched, total output, total ground-truth) lengths over
    deduplicated edge sets."""
    out_set = set(output_edges)
    gt_set = set(gt_edges)
    correct = _set_length(out_set & gt_set, net)
    return correct, _set_length(out_set, net), _set_length(gt_set, net)


def precision_recall(output: MatchResult, gt: GroundTruthPath,
                     net: RoadNetwork) -> tuple[float, float]:
    """Length ratio of correctly matched segments against the output
    (precision) and against the ground truth (recall)."""
    if not gt.edges:
        raise EvalError(f"empty ground truth for {gt.traj_id!r}")
    if not output.edges:
        raise EvalError(f"empty output path for {output.traj_id!r}")
    correct, out_len, gt_len = match_lengths(output.edges, gt.edges, net)
    return correct / out_len, correct / gt_len


@dataclass(frozen=True)
class TrajScore:
    traj_id: str
    status: str
    precision: float | None
    recall: float | None
    gt_length_m: float
    matched_length_m: float
    runtime_s: float


@dataclass
class EvalReport:
    rows: list[TrajScore] = field(default_factory=list)
    failure_counts: dict[str, int] = field(default_factory=dict)
    stage_stats: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def scored(self) -> list[TrajScore]:
        return [r for r in self.rows if r.precision is not None]

    @property
    def n_failed(self) -> int:
        return sum(self.failure_counts.values())

    def macro_precision(self) -> float | None:
        rows = self.scored
        return sum(r.precision for r in rows) / len(rows) if rows else None

    def macro_recall(self) -> float | None:
        rows = self.scored
        return sum(r.recall for r in rows) / len(rows) if rows else None

    def weighted_precision(self) -> float | None:
        """Weights each trajectory by its matched length, so the result is
        the pooled correct/matched length ratio."""
        rows = self.scored
        total = sum(r.matched_length_m for r in rows)
        if not rows or total == 0:
            return None
        return sum(r.precision * r.matched_length_m for r in rows) / total

    def weighted_recall(self) -> float | None:
        rows = self.scored
        total = sum(r.gt_length_m for r in rows)
        if not rows or total == 0:
            return None
        return sum(r.recall * r.gt_length_m for r in rows) / total

    def aggregates(self) -> dict:
        return {
            "n_trajectories": len(self.rows),
            "n_scored": len(self.scored),
            "n_failed": self.n_failed,
            "macro_precision": self.macro_precision(),
            "macro_recall": self.macro_recall(),
            "weighted_precision": self.weighted_precision(),
            "weighted_recall": self.weighted_recall(),
            "failure_counts": dict(sorted(self.failure_counts.items())),
            "stage_stats": self.stage_stats,
        }


def score_outcome(outcome: PipelineOutcome, gt: GroundTruthPath | None,
                  net: RoadNetwork) -> TrajScore:
    if outcome.ok and gt is not None and gt.edges and outcome.result.edges:
        p, r = precision_recall(outcome.result, gt, net)
        _, out_len, gt_len = match_lengths(outcome.result.edges, gt.edges, net)
        return TrajScore(outcome.traj_id, outcome.status, p, r,
                         gt_len, out_len, outcome.timings.match)
    gt_len = _set_length(gt.edges, net) if gt is not None else 0.0
    return TrajScore(outcome.traj_id, outcome.status, None, None,
                     gt_len, 0.0, outcome.timings.match)


def _stage_stats(samples: dict[str, list[float]]) -> dict[str, dict[str, float]]:
    out = {}
    for stage, values in samples.items():
        if values:
            arr = np.asarray(values)
            out[stage] = {"mean_s": float(arr.mean()),
                          "p95_s": float(np.percentile(arr, 95))}
    return out


def benchmark(trajs: list[CellularTrajectory],
              ground_truth: dict[str, GroundTruthPath],
              net: RoadNetwork,
              params: MatchParams = MatchParams()) -> EvalReport:
    """Run the full pipeline over a dataset, scoring and timing each
    trajectory; failures are tallied, never fatal."""
    report = EvalReport()
    stage_samples: dict[str, list[float]] = {
        "rasterize": [], "calibrate": [], "match": [], "total": []}
    for traj in trajs:
        outcome = match_one(traj, net, params)
        gt = ground_truth.get(traj.traj_id)
        report.rows.append(score_outcome(outcome, gt, net))
        if not outcome.ok:
            report.failure_counts[outcome.status] = \
                report.failure_counts.get(outcome.status, 0) + 1
        t = outcome.timings
        stage_samples["rasterize"].append(t.rasterize)
        stage_samples["calibrate"].append(t.calibrate)
        stage_samples["match"].append(t.match)
        stage_samples["total"].append(t.total)
    report.stage_stats = _stage_stats(stage_samples)
    return report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summarize(report: EvalReport) -> str:
    """Deterministic CSV table, one row per trajectory, fixed columns."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([_fmt(getattr(row, col)) for col in CSV_COLUMNS])
    return buf.getvalue()


def format_summary(report: EvalReport) -> str:
    """Short human-readable digest of the aggregates."""
    agg = report.aggregates()
    lines = [f"trajectories: {agg['n_trajectories']} "
             f"(scored {agg['n_scored']}, failed {agg['n_failed']})"]
    for name in ("macro_precision", "macro_recall",
                 "weighted_precision", "weighted_recall"):
        value = agg[name]
        lines.append(f"{name}: " + ("n/a" if value is None else f"{value:.4f}"))
    for status, count in agg["failure_counts"].items():
        lines.append(f"failure[{status}]: {count}")
    for stage, stats in agg["stage_stats"].items():
        lines.append(f"time[{stage}]: mean {stats['mean_s'] * 1e3:.2f} ms, "
                     f"p95 {stats['p95_s'] * 1e3:.2f} ms")
    return "\n".join(lines)
