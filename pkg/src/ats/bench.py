"""Drift comparison harness: tree scheduling vs chunked AR on shared seeds.

Three configurations run per seed: the AR rollout with periodic cache
resets ("ar-reset"), the AR rollout with the position-shift variant that
never jumps ("ar-shift"), and the tree run ("ats"). All are measured on the
same reset-schedule grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import SyntheticBackend, SyntheticWorldConfig, synth_conditioning
from .core import ArConfig, ConditioningTrack, RunArtifact
from .executor import ExecPolicy, run_ar, run_tree
from .metrics import (
    DriftReport,
    QualitySeries,
    ResetSchedule,
    drift_report,
    quality_series,
    write_per_boundary_csv,
    write_per_chunk_csv,
    write_report_csv,
)
from .planner import PlannerConfig, plan_tree
from .core import ContextLimits

METHOD_LABELS = ("ar-reset", "ar-shift", "ats")

PAPER_SCALE_LIMITS = ContextLimits(m_min=33, m_max=81, stride_sf=8, anchor_width=1)


def default_world(fps: int = 16) -> SyntheticWorldConfig:
    return SyntheticWorldConfig(fps=fps)


def run_method(
    label: str,
    horizon: int,
    seed: int,
    world: SyntheticWorldConfig,
    conditioning: ConditioningTrack,
    reset_period_s: float = 192.0,
    chunk_len: int = 81,
    workers: int = 4,
) -> RunArtifact:
    backend = SyntheticBackend(world)
    if label == "ats":
        config = PlannerConfig(limits=PAPER_SCALE_LIMITS)
        plan = plan_tree(horizon, config, seed=seed)
        policy = ExecPolicy(workers=workers)
        return run_tree(plan, backend, policy, conditioning)
    if label in ("ar-reset", "ar-shift"):
        arcfg = ArConfig(
            chunk_len=chunk_len,
            reset_period_frames=int(round(reset_period_s * world.fps)),
            carry_window=1,
            variant="reset" if label == "ar-reset" else "position_shift",
        )
        return run_ar(horizon, arcfg, backend, conditioning, seed=seed)
    raise ValueError(f"unknown method label {label!r}")


def method_series(
    label: str,
    horizon: int,
    seed: int,
    world: SyntheticWorldConfig,
    conditioning: ConditioningTrack,
    reset_period_s: float = 192.0,
    workers: int = 4,
) -> QualitySeries:
    artifact = run_method(label, horizon, seed, world, conditioning, reset_period_s, workers=workers)
    return quality_series(artifact.frames, conditioning, world)


def boundary_and_interior_deltas(
    series: QualitySeries, schedule: ResetSchedule
) -> tuple[list[float], list[float]]:
    """Boundary-crossing deltas and matched same-gap deltas from window
    interiors (the null for "is the boundary special?")."""
    off = schedule.offset_frames
    boundary = [abs(series.at(b - off) - series.at(b + off)) for b in schedule.boundaries]
    edges = [0, *schedule.boundaries, series.horizon]
    interior = []
    for left, right in zip(edges, edges[1:]):
        center = (left + right) // 2
        if center - off >= 1 and center + off <= series.horizon:
            interior.append(abs(series.at(center - off) - series.at(center + off)))
    return boundary, interior


def welch_t(a: np.ndarray, b: np.ndarray) -> float:
    """Welch's t statistic for two independent samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    denom = np.sqrt(va + vb)
    if denom == 0.0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


@dataclass(frozen=True)
class MethodStats:
    label: str
    horizon: int
    global_mean: float
    chunk_drift_mean: float
    reset_jump_mean: float
    per_chunk_mean: tuple[float, ...]
    per_boundary_mean: tuple[float, ...]


@dataclass(frozen=True)
class DriftBenchSummary:
    stats: tuple[MethodStats, ...]
    jump_ratio: float
    drift_ratio: float
    shift_boundary_t: float

    def by_label(self, label: str) -> MethodStats:
        for s in self.stats:
            if s.label == label:
                return s
        raise KeyError(label)

    def lines(self) -> list[str]:
        out = ["method      global    |dM|_c    |dM|_r"]
        for s in self.stats:
            out.append(
                f"{s.label:<10}  {s.global_mean:7.3f}  {s.chunk_drift_mean:8.3f}  {s.reset_jump_mean:8.3f}"
            )
        out.append(f"reset-jump ratio ar-reset/ats: {self.jump_ratio:.2f}x")
        out.append(f"chunk-drift ratio ar-reset/ats: {self.drift_ratio:.2f}x")
        out.append(f"ar-shift boundary-vs-interior Welch t: {self.shift_boundary_t:.2f}")
        return out


def run_drift_bench(
    out_dir: Path | None,
    seeds: int = 20,
    horizon_min: float = 30.0,
    fps: int = 16,
    reset_period_s: float = 192.0,
    workers: int = 4,
    world: SyntheticWorldConfig | None = None,
) -> DriftBenchSummary:
    """Run the full three-way comparison and (optionally) write the CSVs."""
    world = world or default_world(fps)
    horizon = int(round(horizon_min * 60 * fps))
    conditioning = synth_conditioning(horizon, world)
    schedule = ResetSchedule.periodic(horizon, fps, reset_period_s)

    reports: dict[str, list[DriftReport]] = {label: [] for label in METHOD_LABELS}
    shift_boundary: list[float] = []
    shift_interior: list[float] = []
    for seed in range(seeds):
        for label in METHOD_LABELS:
            series = method_series(label, horizon, seed, world, conditioning, reset_period_s, workers)
            reports[label].append(drift_report(label, series, schedule))
            if label == "ar-shift":
                boundary, interior = boundary_and_interior_deltas(series, schedule)
                shift_boundary.extend(boundary)
                shift_interior.extend(interior)

    stats = []
    for label in METHOD_LABELS:
        rs = reports[label]
        stats.append(
            MethodStats(
                label=label,
                horizon=horizon,
                global_mean=float(np.mean([r.global_mean for r in rs])),
                chunk_drift_mean=float(np.mean([r.chunk_drift_mean for r in rs])),
                reset_jump_mean=float(np.mean([r.reset_jump_mean for r in rs])),
                per_chunk_mean=tuple(np.mean([r.per_chunk for r in rs], axis=0).tolist()),
                per_boundary_mean=tuple(np.mean([r.per_boundary for r in rs], axis=0).tolist()),
            )
        )
    summary = DriftBenchSummary(
        stats=tuple(stats),
        jump_ratio=stats[0].reset_jump_mean / stats[2].reset_jump_mean,
        drift_ratio=stats[0].chunk_drift_mean / stats[2].chunk_drift_mean,
        shift_boundary_t=welch_t(np.asarray(shift_boundary), np.asarray(shift_interior)),
    )

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        mean_reports = [
            DriftReport(
                method=s.label,
                horizon=s.horizon,
                global_mean=s.global_mean,
                chunk_drift_mean=s.chunk_drift_mean,
                reset_jump_mean=s.reset_jump_mean,
                per_chunk=s.per_chunk_mean,
                per_boundary=s.per_boundary_mean,
            )
            for s in stats
        ]
        write_report_csv(out_dir / "report.csv", mean_reports)
        write_per_chunk_csv(out_dir / "per_chunk.csv", mean_reports)
        write_per_boundary_csv(out_dir / "per_boundary.csv", mean_reports)
        (out_dir / "summary.json").write_text(
            json.dumps(
                {
                    "seeds": seeds,
                    "horizon_frames": horizon,
                    "jump_ratio": summary.jump_ratio,
                    "drift_ratio": summary.drift_ratio,
                    "shift_boundary_t": summary.shift_boundary_t,
                    "methods": {
                        s.label: {
                            "global_mean": s.global_mean,
                            "chunk_drift_mean": s.chunk_drift_mean,
                            "reset_jump_mean": s.reset_jump_mean,
                        }
                        for s in stats
                    },
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
    return summary
