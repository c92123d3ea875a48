"""Analytic makespan computation and the runtime-vs-duration sweep.

List scheduling, siblings in time order, with a hard barrier between
levels: under a uniform per-call cost and enough workers, a tree run takes
(leaf_level + 1) calls on the critical path while chunked AR takes
ceil(T / chunk_len) sequential calls regardless of worker count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .core import TreePlan
from .planner import PlannerConfig, plan_tree


@dataclass(frozen=True)
class LatencyProfile:
    """Per-call cost (uniform seconds, or a per-kind map) and worker count."""

    tau_call: float | Mapping[str, float] = 1.0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if isinstance(self.tau_call, (int, float)):
            if self.tau_call <= 0:
                raise ValueError("tau_call must be > 0")
        else:
            if not self.tau_call or any(v <= 0 for v in self.tau_call.values()):
                raise ValueError("per-kind tau values must be > 0")

    def tau_for(self, kind: str) -> float:
        if isinstance(self.tau_call, (int, float)):
            return float(self.tau_call)
        if kind in self.tau_call:
            return float(self.tau_call[kind])
        if "leaf" in self.tau_call:
            return float(self.tau_call["leaf"])
        raise ValueError(f"no tau for kind {kind!r}")


def makespan_tree(plan: TreePlan, profile: LatencyProfile) -> float:
    """Finish time of the plan list-scheduled level by level on G workers."""
    g = profile.workers
    finish = 0.0
    for level in plan.levels_present():
        calls = sorted(plan.calls_at(level), key=lambda c: c.interval.start)
        workers = [finish] * min(g, len(calls))
        for call in calls:
            slot = min(range(len(workers)), key=workers.__getitem__)
            workers[slot] += profile.tau_for(call.kind)
        finish = max(workers)
    return finish


def makespan_ar(horizon: int, chunk_len: int, profile: LatencyProfile) -> float:
    """K * tau for the sequential chain; worker count is irrelevant."""
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    k = math.ceil(horizon / chunk_len)
    return k * profile.tau_for("leaf")


@dataclass(frozen=True, slots=True)
class SweepRow:
    horizon_frames: int
    duration_s: float | None
    ats_s: float
    ar_s: float
    speedup: float
    realtime_ratio: float | None


def sweep(
    horizons: Sequence[int],
    config: PlannerConfig,
    profile: LatencyProfile,
    fps: int | None = None,
    chunk_len: int | None = None,
    seed: int = 0,
) -> list[SweepRow]:
    """Makespans over increasing horizons on freshly planned trees."""
    if list(horizons) != sorted(set(horizons)):
        raise ValueError("horizons must be strictly increasing")
    chunk = chunk_len if chunk_len is not None else config.limits.m_max
    rows = []
    for horizon in horizons:
        plan = plan_tree(horizon, config, seed=seed)
        ats_s = makespan_tree(plan, profile)
        ar_s = makespan_ar(horizon, chunk, profile)
        duration = horizon / fps if fps else None
        rows.append(
            SweepRow(
                horizon_frames=horizon,
                duration_s=duration,
                ats_s=ats_s,
                ar_s=ar_s,
                speedup=ar_s / ats_s,
                realtime_ratio=(duration / ats_s) if duration is not None else None,
            )
        )
    return rows


def write_sweep_csv(path: str | Path, rows: Sequence[SweepRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon_frames", "duration_s", "ats_s", "ar_s", "speedup", "realtime_ratio"])
        for r in rows:
            writer.writerow(
                [
                    r.horizon_frames,
                    "" if r.duration_s is None else f"{r.duration_s:.6g}",
                    f"{r.ats_s:.6g}",
                    f"{r.ar_s:.6g}",
                    f"{r.speedup:.6g}",
                    "" if r.realtime_ratio is None else f"{r.realtime_ratio:.6g}",
                ]
            )
