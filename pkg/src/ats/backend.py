"""Generator-backend contract and the synthetic drift-model world.

The synthetic world makes the scheduling claims testable without neural
models. Frames carry two channels: structure (channel 0) is pinned by the
conditioning track, identity (channel 1) is unpinned and is where drift
lives. The target identity is 0 everywhere, so the identity channel value
is directly the identity error.

Bounded calls (root / refine / leaf / inpaint) produce identity errors whose
distribution does not depend on absolute time; the autoregressive rollout
performs a per-frame identity random walk, optionally re-seeded with a jump
at each cache reset, so its error grows with the horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import rng
from .core import (
    Anchor,
    ArConfig,
    BackendError,
    CallResult,
    CallSpec,
    ConditioningTrack,
    FrameBlock,
    Interval,
    payload_interval,
)

STRUCT_CHANNEL = 0
IDENTITY_CHANNEL = 1
FRAME_CHANNELS = 2

# Draw-key ids for the counter RNG; one key per noise purpose.
K_ROOT_SHARED = 1
K_ROOT_ANCHOR = 2
K_VALUE_NOISE = 3
K_STRUCT_NOISE = 4
K_AR_STEP = 5
K_AR_JUMP = 6


@dataclass(frozen=True, slots=True)
class BackendContract:
    """Capabilities a backend declares to the executor."""

    max_interval: int
    supports_root: bool = True
    supports_refine: bool = True
    supports_leaf: bool = True
    supports_inpaint: bool = True
    max_concurrency: int | None = None  # None = unlimited

    def supports_kind(self, kind: str) -> bool:
        return {
            "root": self.supports_root,
            "refine": self.supports_refine,
            "leaf": self.supports_leaf,
            "inpaint_seam": self.supports_inpaint,
        }[kind]


@dataclass(frozen=True, slots=True)
class SyntheticWorldConfig:
    """Parameters of the synthetic world.

    sigma_step / sigma_jump drive the AR random walk and reset jump;
    sigma_leaf is the per-frame infill noise of bounded calls;
    sigma_root_shared / sigma_root_anchor split the root anchor error into a
    shared bias and per-anchor noise; sigma_struct perturbs the structure
    channel. lambda_id / mu_struct weight the quality penalty
    M = clip(100 - lambda*|identity| - mu*|structure residual|, 0, 100).
    """

    fps: int = 16
    period_p: int = 240
    sigma_step: float = 0.02
    sigma_jump: float = 0.5
    sigma_leaf: float = 0.01
    sigma_root_shared: float = 0.1
    sigma_root_anchor: float = 0.02
    sigma_struct: float = 0.01
    lambda_id: float = 10.0
    mu_struct: float = 50.0

    def __post_init__(self) -> None:
        if self.fps < 1:
            raise ValueError("fps must be >= 1")
        if self.period_p < 1:
            raise ValueError("period_p must be >= 1")
        for name in ("sigma_step", "sigma_jump", "sigma_leaf", "sigma_root_shared",
                     "sigma_root_anchor", "sigma_struct"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "fps": self.fps,
            "period_p": self.period_p,
            "sigma_step": self.sigma_step,
            "sigma_jump": self.sigma_jump,
            "sigma_leaf": self.sigma_leaf,
            "sigma_root_shared": self.sigma_root_shared,
            "sigma_root_anchor": self.sigma_root_anchor,
            "sigma_struct": self.sigma_struct,
            "lambda_id": self.lambda_id,
            "mu_struct": self.mu_struct,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticWorldConfig":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True, slots=True)
class ArState:
    """Rolling state of the AR rollout.

    recent holds the last carry_window emitted identities so a reset can
    re-seed from their mean even when it falls near a chunk boundary.
    """

    identity_estimate: float = 0.0
    frames_since_reset: int = 0
    chunk_index: int = 0
    rng_state: int = 0
    recent: tuple[float, ...] = (0.0,)


def synth_conditioning(horizon: int, config: SyntheticWorldConfig) -> ConditioningTrack:
    """Deterministic single-channel track: sin(2*pi*t / period_p) at frame t."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    t = np.arange(1, horizon + 1, dtype=np.float64)
    data = np.sin(2.0 * math.pi * t / config.period_p).reshape(horizon, 1)
    return ConditioningTrack(horizon=horizon, channels=1, data=data)


def _lerp(u_a: float, u_b: float, t_a: int, t_b: int, frames: np.ndarray) -> np.ndarray:
    """Linear interpolation of bracket identities at the given frames.

    The exact expression u_a + (u_b - u_a) * ((t - t_a) / (t_b - t_a)) in
    float64 is part of the wire-conformance contract; external workers must
    reproduce it operation for operation.
    """
    frac = (np.asarray(frames, dtype=np.float64) - float(t_a)) / float(t_b - t_a)
    return u_a + (u_b - u_a) * frac


def anchor_identity(anchor: Anchor) -> float:
    """Identity carried by an anchor payload (constant across the payload)."""
    return float(anchor.payload.samples[0, IDENTITY_CHANNEL, 0, 0])


def _make_payload_block(
    times: np.ndarray,
    identities: np.ndarray,
    structures: np.ndarray,
    width: int,
    level: int,
    horizon: int,
) -> list[Anchor]:
    # Adding +0.0 canonicalizes IEEE negative zeros (zero-sigma draws can
    # yield -0.0, which is numerically equal but not byte-equal).
    identities = identities + 0.0
    structures = structures + 0.0
    anchors = []
    for t, u, s in zip(times.tolist(), identities.tolist(), structures.tolist()):
        iv = payload_interval(int(t), width, horizon)
        samples = np.empty((width, FRAME_CHANNELS, 1, 1), dtype=np.float32)
        samples[:, STRUCT_CHANNEL, 0, 0] = np.float32(s)
        samples[:, IDENTITY_CHANNEL, 0, 0] = np.float32(u)
        block = FrameBlock(interval=iv, channels=FRAME_CHANNELS, height=1, width=1, samples=samples)
        anchors.append(Anchor(time=int(t), width=width, level=level, payload=block))
    return anchors


def root_generate(
    spec: CallSpec,
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
    anchor_width: int = 1,
) -> list[Anchor]:
    """Emit the coarsest anchors from conditioning alone.

    One shared bias is drawn per call; each anchor adds its own noise on
    top, so all root anchors of a run are correlated (the whole-sample
    coherence a single sparse call provides).
    """
    if not spec.interior_times:
        raise BackendError("root call with no times", spec.call_id)
    times = np.asarray(spec.interior_times, dtype=np.int64)
    horizon = conditioning.start + conditioning.horizon - 1
    if times.min() < 1 or times.max() > horizon:
        raise BackendError("root anchor time outside horizon", spec.call_id)
    shared = rng.normal_scalar(spec.seed, 0, K_ROOT_SHARED) * world.sigma_root_shared
    eps = rng.standard_normal(spec.seed, times, K_ROOT_ANCHOR) * world.sigma_root_anchor
    identities = shared + eps
    structures = conditioning.values(times) + (
        rng.standard_normal(spec.seed, times, K_STRUCT_NOISE) * world.sigma_struct
    )
    return _make_payload_block(times, identities, structures, anchor_width, spec.level, horizon)


def refine_generate(
    spec: CallSpec,
    brackets: Sequence[Anchor],
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
    anchor_width: int = 1,
) -> list[Anchor]:
    """Insert anchors strictly between two brackets by bounded infill."""
    a, b = brackets
    times = np.asarray(spec.interior_times, dtype=np.int64)
    if times.size == 0:
        raise BackendError("refine call with no interior times", spec.call_id)
    if times.min() <= a.time or times.max() >= b.time:
        raise BackendError("interior time outside bracket span", spec.call_id)
    u_a, u_b = anchor_identity(a), anchor_identity(b)
    identities = _lerp(u_a, u_b, a.time, b.time, times) + (
        rng.standard_normal(spec.seed, times, K_VALUE_NOISE) * world.sigma_leaf
    )
    structures = conditioning.values(times) + (
        rng.standard_normal(spec.seed, times, K_STRUCT_NOISE) * world.sigma_struct
    )
    horizon = conditioning.start + conditioning.horizon - 1
    return _make_payload_block(times, identities, structures, anchor_width, spec.level, horizon)


def _dense_block(
    interval: Interval,
    identities: np.ndarray,
    structures: np.ndarray,
) -> FrameBlock:
    n = interval.length
    samples = np.empty((n, FRAME_CHANNELS, 1, 1), dtype=np.float32)
    # +0.0 canonicalizes IEEE negative zeros from zero-sigma draws.
    samples[:, STRUCT_CHANNEL, 0, 0] = (structures + 0.0).astype(np.float32)
    samples[:, IDENTITY_CHANNEL, 0, 0] = (identities + 0.0).astype(np.float32)
    return FrameBlock(interval=interval, channels=FRAME_CHANNELS, height=1, width=1, samples=samples)


def leaf_generate(
    spec: CallSpec,
    brackets: Sequence[Anchor],
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
) -> FrameBlock:
    """Dense bounded infill between two brackets.

    A bracket-less call (degenerate single-call plan) behaves like a
    one-call sample: identity sits at a root-style shared bias.
    """
    frames = spec.interval.frames()
    if brackets:
        a, b = brackets
        if spec.interval.start <= a.payload.interval.end or spec.interval.end >= b.payload.interval.start:
            raise BackendError("leaf interval overlaps bracket payloads", spec.call_id)
        base = _lerp(anchor_identity(a), anchor_identity(b), a.time, b.time, frames)
    else:
        base = rng.normal_scalar(spec.seed, 0, K_ROOT_SHARED) * world.sigma_root_shared
    identities = base + rng.standard_normal(spec.seed, frames, K_VALUE_NOISE) * world.sigma_leaf
    structures = conditioning.values(frames) + (
        rng.standard_normal(spec.seed, frames, K_STRUCT_NOISE) * world.sigma_struct
    )
    return _dense_block(spec.interval, identities, structures)


def inpaint_generate(
    spec: CallSpec,
    brackets: Sequence[Anchor],
    anchor: Anchor,
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
) -> FrameBlock:
    """Regenerate the frames around an anchor, leaving its payload intact.

    Each side is a bounded infill between the outer bracket value and the
    facing payload-edge value; payload frames are copied through verbatim.
    """
    left, right = brackets
    pv = anchor.payload.interval
    if not (left.time < pv.start and right.time > pv.end):
        raise BackendError("inpaint brackets must enclose the anchor payload", spec.call_id)
    if spec.interval.start != left.time + 1 or spec.interval.end != right.time - 1:
        raise BackendError("inpaint interval must abut its brackets", spec.call_id)
    frames = spec.interval.frames()
    identities = np.empty(frames.shape, dtype=np.float64)

    p_left = float(anchor.payload.samples[0, IDENTITY_CHANNEL, 0, 0])
    p_right = float(anchor.payload.samples[-1, IDENTITY_CHANNEL, 0, 0])
    left_sel = frames < pv.start
    right_sel = frames > pv.end
    identities[~(left_sel | right_sel)] = 0.0
    identities[left_sel] = _lerp(anchor_identity(left), p_left, left.time, pv.start, frames[left_sel])
    identities[right_sel] = _lerp(p_right, anchor_identity(right), pv.end, right.time, frames[right_sel])
    noise = rng.standard_normal(spec.seed, frames, K_VALUE_NOISE) * world.sigma_leaf
    identities[left_sel] += noise[left_sel]
    identities[right_sel] += noise[right_sel]

    structures = conditioning.values(frames) + (
        rng.standard_normal(spec.seed, frames, K_STRUCT_NOISE) * world.sigma_struct
    )
    block = _dense_block(spec.interval, identities, structures)
    # Payload frames are canonical: copy them through bit-exactly.
    lo = pv.start - spec.interval.start
    block.samples[lo : lo + pv.length] = anchor.payload.samples
    return block


def ar_rollout_chunk(
    state: ArState,
    chunk: Interval,
    conditioning: ConditioningTrack,
    world: SyntheticWorldConfig,
    arcfg: ArConfig,
) -> tuple[FrameBlock, ArState, list[int]]:
    """Generate one AR chunk and advance the rolling state.

    Returns (frames, new state, reset frames inside this chunk). Under the
    reset variant, after the counter wraps the identity re-seeds as the mean
    of the last carry_window identities plus a jump; under position_shift no
    jump is ever added and the walk continues unbroken. Draws are keyed by
    absolute frame, so output does not depend on chunk boundaries.
    """
    frames = chunk.frames()
    n = len(frames)
    period = arcfg.reset_period_frames
    steps = rng.standard_normal(state.rng_state, frames, K_AR_STEP) * world.sigma_step
    identities = np.empty(n, dtype=np.float64)

    # Local indices after which the counter wraps (reset applies after that frame).
    first = period - 1 - state.frames_since_reset
    reset_idx = list(range(first, n, period)) if first < n else []
    resets = [int(frames[i]) for i in reset_idx]

    u = state.identity_estimate
    counter = state.frames_since_reset
    tail = np.asarray(state.recent, dtype=np.float64)
    seg_start = 0
    for i in reset_idx + [n - 1]:
        if seg_start > i:
            continue
        identities[seg_start : i + 1] = u + np.cumsum(steps[seg_start : i + 1])
        u = float(identities[i])
        tail = np.concatenate([tail, identities[seg_start : i + 1]])[-arcfg.carry_window :]
        if i in reset_idx and arcfg.variant == "reset":
            jump = rng.normal_scalar(state.rng_state, int(frames[i]), K_AR_JUMP) * world.sigma_jump
            u = float(tail.mean()) + jump
        seg_start = i + 1
    counter = (n - 1 - reset_idx[-1]) if reset_idx else counter + n

    structures = conditioning.values(frames) + (
        rng.standard_normal(state.rng_state, frames, K_STRUCT_NOISE) * world.sigma_struct
    )
    block = _dense_block(chunk, identities, structures)
    new_state = ArState(
        identity_estimate=u,
        frames_since_reset=counter,
        chunk_index=state.chunk_index + 1,
        rng_state=state.rng_state,
        recent=tuple(tail.tolist()),
    )
    return block, new_state, resets


def extract_conditioning(frames: FrameBlock) -> ConditioningTrack:
    """Re-extract the conditioning track (structure channel) from frames."""
    if frames.channels <= STRUCT_CHANNEL:
        raise BackendError("frame block has no structure channel")
    data = frames.channel_values(STRUCT_CHANNEL).astype(np.float64).reshape(-1, 1)
    return ConditioningTrack(
        horizon=frames.interval.length, channels=1, data=data, start=frames.interval.start
    )


class Backend(Protocol):
    """What the executor needs from a generator backend."""

    def capabilities(self) -> BackendContract: ...

    def run_call(
        self,
        spec: CallSpec,
        brackets: Sequence[Anchor],
        conditioning: ConditioningTrack,
        context_anchor: Anchor | None = None,
    ) -> CallResult: ...


class SyntheticBackend:
    """In-process backend over the synthetic world."""

    def __init__(self, world: SyntheticWorldConfig, anchor_width: int = 1) -> None:
        self.world = world
        self.anchor_width = anchor_width

    def capabilities(self) -> BackendContract:
        return BackendContract(max_interval=2**31 - 1, max_concurrency=None)

    def run_call(
        self,
        spec: CallSpec,
        brackets: Sequence[Anchor],
        conditioning: ConditioningTrack,
        context_anchor: Anchor | None = None,
    ) -> CallResult:
        if spec.kind == "root":
            anchors = root_generate(spec, conditioning, self.world, self.anchor_width)
            return CallResult(call_id=spec.call_id, anchors=tuple(anchors))
        if spec.kind == "refine":
            anchors = refine_generate(spec, brackets, conditioning, self.world, self.anchor_width)
            return CallResult(call_id=spec.call_id, anchors=tuple(anchors))
        if spec.kind == "leaf":
            return CallResult(call_id=spec.call_id, frames=leaf_generate(spec, brackets, conditioning, self.world))
        if spec.kind == "inpaint_seam":
            if context_anchor is None:
                raise BackendError("inpaint call needs the anchor under repair", spec.call_id)
            return CallResult(
                call_id=spec.call_id,
                frames=inpaint_generate(spec, brackets, context_anchor, conditioning, self.world),
            )
        raise BackendError(f"unsupported call kind {spec.kind!r}", spec.call_id)

    def ar_chunk(
        self, state: ArState, chunk: Interval, conditioning: ConditioningTrack, arcfg: ArConfig
    ) -> tuple[FrameBlock, ArState, list[int]]:
        return ar_rollout_chunk(state, chunk, conditioning, self.world, arcfg)
