"""Quality and drift measurement.

Frame-time convention: frame t corresponds to t / fps seconds, so "5 s after
the clip start" is frame 5 * fps. Drift metrics are computed on a reset-
schedule grid; for tree runs the grid is the AR comparator's schedule (the
grid is a measurement protocol, not a property of the run being measured).

Window convention: reset boundaries split [1, T] into windows. Window i is
bounded by virtual edges w_0 = 0 (clip start) and w_last = T, so the first
in-window sample sits offset seconds after the clip start and every full
window contributes the same gap. Chunk drift compares the samples offset
seconds inside both ends of each window; the reset jump compares samples
across each boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backend import (
    IDENTITY_CHANNEL,
    STRUCT_CHANNEL,
    SyntheticWorldConfig,
)
from .core import ConditioningTrack, FrameBlock, MetricsError


@dataclass(frozen=True, eq=False)
class QualitySeries:
    """Per-frame quality M(t) in [0, 100]."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if not np.isfinite(self.values).all():
            raise ValueError("quality values must be finite")

    @property
    def horizon(self) -> int:
        return int(self.times[-1])

    def at(self, t: int) -> float:
        idx = int(t) - int(self.times[0])
        if idx < 0 or idx >= len(self.times):
            raise MetricsError(f"frame {t} outside series")
        return float(self.values[idx])


@dataclass(frozen=True, slots=True)
class ResetSchedule:
    """Measurement grid: reset boundary frames plus the sampling offset."""

    boundaries: tuple[int, ...]
    fps: int
    sample_offset_s: float = 5.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.boundaries, dtype=np.int64)
        if len(arr) and (np.diff(arr) <= 0).any():
            raise ValueError("boundaries must be strictly increasing")
        if self.fps < 1:
            raise ValueError("fps must be >= 1")

    @property
    def offset_frames(self) -> int:
        return int(round(self.sample_offset_s * self.fps))

    @classmethod
    def periodic(cls, horizon: int, fps: int, reset_period_s: float, sample_offset_s: float = 5.0) -> "ResetSchedule":
        period = int(round(reset_period_s * fps))
        boundaries = tuple(range(period, horizon, period))
        return cls(boundaries=boundaries, fps=fps, sample_offset_s=sample_offset_s)


@dataclass(frozen=True)
class DriftReport:
    method: str
    horizon: int
    global_mean: float
    chunk_drift_mean: float
    reset_jump_mean: float
    per_chunk: tuple[float, ...]
    per_boundary: tuple[float, ...]


def quality_series(
    frames: FrameBlock,
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
) -> QualitySeries:
    """M(t) = clip(100 - lambda*|identity| - mu*|structure residual|, 0, 100)."""
    if frames.channels != 2:
        raise MetricsError(f"expected 2-channel synthetic frames, got {frames.channels}")
    t = frames.interval.frames()
    identity_err = np.abs(frames.channel_values(IDENTITY_CHANNEL).astype(np.float64))
    # Frames are stored as float32; measure the residual against the same
    # quantization so a faithful copy scores exactly zero.
    reference = conditioning.values(t).astype(np.float32).astype(np.float64)
    residual = np.abs(frames.channel_values(STRUCT_CHANNEL).astype(np.float64) - reference)
    values = np.clip(100.0 - world.lambda_id * identity_err - world.mu_struct * residual, 0.0, 100.0)
    return QualitySeries(times=t, values=values)


def global_score(series: QualitySeries, n_keyframes: int = 60) -> float:
    """Mean quality over uniformly sampled keyframes (midpoint convention)."""
    horizon = series.horizon
    if horizon < n_keyframes:
        raise MetricsError(f"horizon {horizon} shorter than {n_keyframes} keyframes")
    k = np.arange(n_keyframes, dtype=np.float64)
    t = np.floor((k + 0.5) * horizon / n_keyframes + 0.5).astype(np.int64)
    t = np.clip(t, 1, horizon)
    return float(np.mean([series.at(int(tk)) for tk in t]))


def _window_edges(series: QualitySeries, schedule: ResetSchedule) -> list[int]:
    horizon = series.horizon
    for b in schedule.boundaries:
        if not (1 < b < horizon):
            raise MetricsError(f"boundary {b} outside (1, {horizon})")
    return [0, *schedule.boundaries, horizon]


def chunk_drift(series: QualitySeries, schedule: ResetSchedule) -> tuple[tuple[float, ...], float]:
    """|M(s_i) - M(e_i)| per inter-reset window, and the mean."""
    edges = _window_edges(series, schedule)
    off = schedule.offset_frames
    values = []
    for left, right in zip(edges, edges[1:]):
        if right - left < 2 * off:
            raise MetricsError(f"window ({left}, {right}] shorter than twice the offset")
        s = left + off
        e = right - off
        values.append(abs(series.at(s) - series.at(e)))
    if not values:
        raise MetricsError("need at least one full inter-reset window")
    return tuple(values), float(np.mean(values))


def reset_jump(series: QualitySeries, schedule: ResetSchedule) -> tuple[tuple[float, ...], float]:
    """|M(e_i) - M(s_{i+1})| per reset boundary, and the mean."""
    if not schedule.boundaries:
        raise MetricsError("need at least one reset boundary")
    edges = _window_edges(series, schedule)
    off = schedule.offset_frames
    values = []
    for b in schedule.boundaries:
        e = b - off
        s = b + off
        if e < 1 or s > series.horizon:
            raise MetricsError(f"boundary {b} too close to the series edge")
        values.append(abs(series.at(e) - series.at(s)))
    return tuple(values), float(np.mean(values))


def drift_report(
    method: str,
    series: QualitySeries,
    schedule: ResetSchedule,
    n_keyframes: int = 60,
) -> DriftReport:
    per_chunk, chunk_mean = chunk_drift(series, schedule)
    per_boundary, jump_mean = reset_jump(series, schedule)
    return DriftReport(
        method=method,
        horizon=series.horizon,
        global_mean=global_score(series, n_keyframes),
        chunk_drift_mean=chunk_mean,
        reset_jump_mean=jump_mean,
        per_chunk=per_chunk,
        per_boundary=per_boundary,
    )


def write_report_csv(path: str | Path, reports: list[DriftReport]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "horizon_frames", "global_mean", "chunk_drift_mean", "reset_jump_mean"])
        for r in reports:
            writer.writerow(
                [r.method, r.horizon, f"{r.global_mean:.6f}", f"{r.chunk_drift_mean:.6f}", f"{r.reset_jump_mean:.6f}"]
            )


def write_per_chunk_csv(path: str | Path, reports: list[DriftReport]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "chunk_index", "delta_c"])
        for r in reports:
            for i, value in enumerate(r.per_chunk):
                writer.writerow([r.method, i, f"{value:.6f}"])


def write_per_boundary_csv(path: str | Path, reports: list[DriftReport]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "boundary_index", "delta_r"])
        for r in reports:
            for i, value in enumerate(r.per_boundary):
                writer.writerow([r.method, i, f"{value:.6f}"])
