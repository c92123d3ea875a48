"""Shared domain types. No I/O, no policy.

Frame indexing convention, stated once for the whole package: frame indices
are 1-based and intervals are inclusive on both ends, so the full horizon is
[1, T] and an interval's length is end - start + 1.

Level convention: level 0 holds the root anchors, levels 1..leaf_level-1 are
refinement levels, and leaf_level is the level of the dense leaf calls. The
critical path of a tree run is therefore leaf_level + 1 calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np


class AtsError(Exception):
    """Base class for errors raised by this package."""


class PlanError(AtsError):
    """Invalid planning input (horizon, limits, placement)."""


class BackendError(AtsError):
    """A generator call failed."""

    def __init__(self, message: str, call_id: str | None = None) -> None:
        super().__init__(message)
        self.call_id = call_id


class ExecutionError(AtsError):
    """A run aborted (failed call after retries, or broken assembly)."""

    def __init__(self, message: str, call_id: str | None = None) -> None:
        super().__init__(message)
        self.call_id = call_id


class CodecError(AtsError):
    """Malformed or truncated frame-block bytes."""


class ProtocolError(AtsError):
    """Wire-protocol violation (bad schema, unknown id, dead worker)."""


class MetricsError(AtsError):
    """Invalid measurement request (bad grid, short windows)."""


FrameIndex = int  # 1-based frame position


@dataclass(frozen=True, slots=True)
class Interval:
    """Inclusive frame interval [start, end].

    Single-frame intervals (start == end) are allowed: keyframe anchor
    payloads and single-frame leaf interiors need them.
    """

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 1:
            raise ValueError(f"interval start must be >= 1, got {self.start}")
        if self.end < self.start:
            raise ValueError(f"empty interval [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def contains(self, t: int) -> bool:
        return self.start <= t <= self.end

    def frames(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1, dtype=np.int64)

    def as_tuple(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True, slots=True)
class ContextLimits:
    """Context budget of the generator backend.

    m_min/m_max bound the leaf spacing, stride_sf is the temporal stride of
    the sparse input assembly, anchor_width is the payload width of emitted
    anchors (1 = keyframe, >1 = clip).
    """

    m_min: int
    m_max: int
    stride_sf: int
    anchor_width: int = 1

    def __post_init__(self) -> None:
        if not (2 <= self.m_min <= self.m_max):
            raise ValueError(f"need 2 <= m_min <= m_max, got {self.m_min}, {self.m_max}")
        if not (1 <= self.anchor_width <= self.stride_sf <= self.m_min):
            raise ValueError(
                "need 1 <= anchor_width <= stride_sf <= m_min, got "
                f"{self.anchor_width}, {self.stride_sf}, {self.m_min}"
            )
        if self.m_max < 2 * self.stride_sf + 1:
            raise ValueError(
                f"m_max={self.m_max} cannot fit two boundary slices plus a lead frame "
                f"(need >= {2 * self.stride_sf + 1})"
            )


@dataclass(frozen=True, eq=False)
class ConditioningTrack:
    """Per-frame conditioning signal, frame-major.

    data has shape (frames, channels), float64, covering frames
    [start, start + frames - 1]. Full tracks start at 1; slices shipped to
    external workers keep their absolute position via start.
    """

    horizon: int
    channels: int
    data: np.ndarray
    start: int = 1

    def __post_init__(self) -> None:
        if self.data.shape != (self.horizon, self.channels):
            raise ValueError(
                f"conditioning data shape {self.data.shape} != ({self.horizon}, {self.channels})"
            )
        if not np.isfinite(self.data).all():
            raise ValueError("conditioning values must be finite")

    @property
    def interval(self) -> Interval:
        return Interval(self.start, self.start + self.horizon - 1)

    def values(self, frames: np.ndarray, channel: int = 0) -> np.ndarray:
        idx = np.asarray(frames, dtype=np.int64) - self.start
        if idx.size and (idx.min() < 0 or idx.max() >= self.horizon):
            raise ValueError("frame outside conditioning track")
        return self.data[idx, channel]

    def value(self, t: int, channel: int = 0) -> float:
        return float(self.values(np.asarray([t]), channel)[0])

    def slice(self, interval: Interval) -> "ConditioningTrack":
        lo = interval.start - self.start
        hi = interval.end - self.start + 1
        if lo < 0 or hi > self.horizon:
            raise ValueError(f"slice {interval.as_tuple()} outside track")
        return ConditioningTrack(
            horizon=interval.length,
            channels=self.channels,
            data=self.data[lo:hi].copy(),
            start=interval.start,
        )


@dataclass(frozen=True, eq=False)
class FrameBlock:
    """Dense array of frames with a bit-exact on-disk encoding.

    samples has shape (frames, channels, height, width), float32, in
    frame -> channel -> row -> column order.
    """

    interval: Interval
    channels: int
    height: int
    width: int
    samples: np.ndarray
    dtype: str = "f32le"

    def __post_init__(self) -> None:
        expected = (self.interval.length, self.channels, self.height, self.width)
        if self.samples.shape != expected:
            raise ValueError(f"sample shape {self.samples.shape} != {expected}")
        if self.samples.dtype != np.float32:
            raise ValueError(f"samples must be float32, got {self.samples.dtype}")
        if self.dtype != "f32le":
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    def channel_values(self, channel: int) -> np.ndarray:
        """Flat per-frame values for height=width=1 blocks."""
        if self.height != 1 or self.width != 1:
            raise ValueError("channel_values requires height == width == 1")
        return self.samples[:, channel, 0, 0]

    def frame_slice(self, interval: Interval) -> "FrameBlock":
        lo = interval.start - self.interval.start
        hi = interval.end - self.interval.start + 1
        if lo < 0 or hi > self.interval.length:
            raise ValueError(f"slice {interval.as_tuple()} outside block {self.interval.as_tuple()}")
        return FrameBlock(
            interval=interval,
            channels=self.channels,
            height=self.height,
            width=self.width,
            samples=np.ascontiguousarray(self.samples[lo:hi]),
        )

    def same_as(self, other: "FrameBlock") -> bool:
        return (
            self.interval == other.interval
            and self.channels == other.channels
            and self.height == other.height
            and self.width == other.width
            and self.samples.tobytes() == other.samples.tobytes()
        )


def payload_interval(time: int, width: int, horizon: int) -> Interval:
    """Interval of an anchor payload centered on its time.

    Even widths are left-biased by one frame; payloads are shifted (not
    shrunk) to stay inside [1, horizon] near the edges.
    """
    if width == 1:
        return Interval(time, time)
    start = time - width // 2
    start = max(1, min(start, horizon - width + 1))
    if start < 1 or start + width - 1 > horizon:
        raise ValueError(f"payload width {width} does not fit horizon {horizon}")
    return Interval(start, start + width - 1)


@dataclass(frozen=True, eq=False)
class Anchor:
    """Timestamped boundary payload, consumable as a start/end condition."""

    time: int
    width: int
    level: int
    payload: FrameBlock

    def __post_init__(self) -> None:
        if self.payload.interval.length != self.width:
            raise ValueError(
                f"payload length {self.payload.interval.length} != anchor width {self.width}"
            )


@dataclass(frozen=True, slots=True)
class AnchorHierarchy:
    """Nested anchor-time levels 0..leaf_level-1.

    Construction is deliberately permissive: structural invariants (nesting,
    endpoint retention, leaf spacing) are checked by the plan validator so
    broken hierarchies can be built and reported on.
    """

    levels: tuple[tuple[int, ...], ...]
    leaf_level: int

    def finest(self) -> tuple[int, ...]:
        return self.levels[-1] if self.levels else ()


CALL_KINDS = ("root", "refine", "leaf", "inpaint_seam")


@dataclass(frozen=True, slots=True)
class CallSpec:
    """One generator call: the two-sided primitive, or the root call.

    bracket_times references bracketing anchors by their time. The root call
    has no brackets and lists every time it emits in interior_times; a
    degenerate single-call plan (horizon fits one context window) carries a
    bracket-less leaf call.
    """

    call_id: str
    kind: str
    level: int
    interval: Interval
    bracket_times: tuple[int, ...]
    interior_times: tuple[int, ...]
    conditioning_slice: Interval
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in CALL_KINDS:
            raise ValueError(f"unknown call kind {self.kind!r}")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class CallResult:
    """Output of one call: anchors (root/refine) or frames (leaf/inpaint)."""

    call_id: str
    anchors: tuple[Anchor, ...] = ()
    frames: FrameBlock | None = None


@dataclass(frozen=True, eq=False)
class TreePlan:
    """Planned anchor hierarchy, call list, and dependency edges.

    deps maps call_id -> ids of the calls it depends on (its producers).
    """

    limits: ContextLimits
    horizon: int
    hierarchy: AnchorHierarchy
    calls: tuple[CallSpec, ...]
    deps: Mapping[str, tuple[str, ...]]
    seed_root: int

    @property
    def is_degenerate(self) -> bool:
        return len(self.calls) == 1 and self.calls[0].kind == "leaf"

    def by_id(self) -> dict[str, CallSpec]:
        return {c.call_id: c for c in self.calls}

    def levels_present(self) -> tuple[int, ...]:
        return tuple(sorted({c.level for c in self.calls}))

    def calls_at(self, level: int) -> tuple[CallSpec, ...]:
        return tuple(c for c in self.calls if c.level == level)

    def leaf_calls(self) -> tuple[CallSpec, ...]:
        return tuple(c for c in self.calls if c.kind == "leaf")


AR_VARIANTS = ("reset", "position_shift")


@dataclass(frozen=True, slots=True)
class ArConfig:
    """Chunked autoregressive rollout configuration.

    The reset cadence is expressed in frames (not chunks) so a seconds-based
    cadence like 192 s at 16 fps lands on exact frame boundaries regardless
    of chunk length; resets may fall mid-chunk.
    """

    chunk_len: int
    reset_period_frames: int
    carry_window: int = 1
    variant: str = "reset"

    def __post_init__(self) -> None:
        if self.chunk_len < 1:
            raise ValueError("chunk_len must be >= 1")
        if self.reset_period_frames < 1:
            raise ValueError("reset_period_frames must be >= 1")
        if not (1 <= self.carry_window <= self.chunk_len):
            raise ValueError("need 1 <= carry_window <= chunk_len")
        if self.variant not in AR_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True, slots=True)
class TraceEntry:
    """Logical schedule record for one call (unit-cost ticks)."""

    call_id: str
    kind: str
    level: int
    start_tick: int
    end_tick: int
    worker: int
    seed: int


@dataclass(frozen=True, eq=False)
class RunArtifact:
    """Frames plus trace for one full run (tree or AR)."""

    method: str  # "ats" | "ar"
    frames: FrameBlock
    trace: tuple[TraceEntry, ...]
    seed: int
    plan: TreePlan | None = None
    ar_config: ArConfig | None = None
    reset_frames: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.method not in ("ats", "ar"):
            raise ValueError(f"unknown method {self.method!r}")
