"""Plan execution: parallel tree runs, sequential AR rollout, mitigations.

Determinism: every call's output is a pure function of its spec (seeds are
baked into the plan), results are merged in interval order, and trace ticks
come from a logical list schedule, so the assembled frames are bit-identical
for any worker count and any dispatch order.

Seam ownership: anchor payload frames are canonical; each leaf owns the open
interval between adjacent payload edges. Anchors stay immutable through
gating and seam repair.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import (
    Backend,
    IDENTITY_CHANNEL,
    FRAME_CHANNELS,
    SyntheticBackend,
    SyntheticWorldConfig,
    extract_conditioning,
)
from .core import (
    Anchor,
    ArConfig,
    BackendError,
    CallResult,
    CallSpec,
    ConditioningTrack,
    ExecutionError,
    FrameBlock,
    Interval,
    ProtocolError,
    RunArtifact,
    TraceEntry,
    TreePlan,
    payload_interval,
)
from .backend import ArState
from .protocol import mix_seed, read_frame_block, write_frame_block


@dataclass(frozen=True, slots=True)
class ExecPolicy:
    """Execution policy: parallelism, dispatch order, mitigation knobs."""

    workers: int = 4
    dispatch_order: str = "level_then_time"
    shuffle_seed: int = 0
    retry_limit: int = 3
    gate_threshold: float = math.inf
    seam_half_width: int = 19
    seam_threshold: float = math.inf

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.dispatch_order not in ("level_then_time", "shuffled"):
            raise ValueError(f"unknown dispatch order {self.dispatch_order!r}")
        if self.seam_half_width < 1:
            raise ValueError("seam_half_width must be >= 1")


def _dispatch_sequence(calls: Sequence[CallSpec], policy: ExecPolicy, level: int) -> list[CallSpec]:
    ordered = sorted(calls, key=lambda c: c.interval.start)
    if policy.dispatch_order == "shuffled":
        perm = np.random.default_rng((policy.shuffle_seed, level)).permutation(len(ordered))
        ordered = [ordered[i] for i in perm]
    return ordered


def _run_call_with_retries(
    backend: Backend,
    spec: CallSpec,
    brackets: Sequence[Anchor],
    conditioning: ConditioningTrack,
    policy: ExecPolicy,
) -> CallResult:
    last: Exception | None = None
    for attempt in range(policy.retry_limit + 1):
        attempt_spec = spec if attempt == 0 else replace(
            spec, seed=mix_seed(spec.seed, f"attempt:{attempt}")
        )
        try:
            return backend.run_call(attempt_spec, brackets, conditioning)
        except (BackendError, ProtocolError) as exc:  # timeouts retry too
            last = exc
    raise ExecutionError(f"call failed after {policy.retry_limit} retries: {last}", spec.call_id)


def run_tree(
    plan: TreePlan,
    backend: Backend,
    policy: ExecPolicy,
    conditioning: ConditioningTrack,
) -> RunArtifact:
    """Execute a plan level by level with bounded sibling parallelism."""
    caps = backend.capabilities()
    if caps.max_interval < plan.limits.m_max:
        raise ExecutionError(
            f"backend max_interval {caps.max_interval} < plan m_max {plan.limits.m_max}"
        )
    for kind in sorted({c.kind for c in plan.calls}):
        if not caps.supports_kind(kind):
            raise ExecutionError(f"backend does not support {kind} calls")
    if conditioning.start != 1 or conditioning.horizon < plan.horizon:
        raise ExecutionError("conditioning track must cover [1, horizon]")

    pool_size = policy.workers
    if caps.max_concurrency is not None:
        pool_size = min(pool_size, caps.max_concurrency)

    anchors: dict[int, Anchor] = {}
    leaf_frames: dict[str, FrameBlock] = {}
    trace: list[TraceEntry] = []
    barrier_tick = 0

    with ThreadPoolExecutor(max_workers=pool_size) as pool:
        for level in plan.levels_present():
            ordered = _dispatch_sequence(plan.calls_at(level), policy, level)
            futures = []
            for spec in ordered:
                brackets = tuple(anchors[t] for t in spec.bracket_times)
                futures.append(
                    pool.submit(_run_call_with_retries, backend, spec, brackets, conditioning, policy)
                )
            for j, (spec, fut) in enumerate(zip(ordered, futures)):
                result = fut.result()
                start = barrier_tick + j // policy.workers
                trace.append(
                    TraceEntry(
                        call_id=spec.call_id,
                        kind=spec.kind,
                        level=spec.level,
                        start_tick=start,
                        end_tick=start + 1,
                        worker=j % policy.workers,
                        seed=spec.seed,
                    )
                )
                for anchor in result.anchors:
                    anchors[anchor.time] = anchor
                if result.frames is not None:
                    leaf_frames[spec.call_id] = result.frames
            barrier_tick += math.ceil(len(ordered) / policy.workers) if ordered else 0

    frames = _assemble(plan, anchors, leaf_frames)
    return RunArtifact(
        method="ats",
        frames=frames,
        trace=tuple(trace),
        seed=plan.seed_root,
        plan=plan,
    )


def _assemble(
    plan: TreePlan,
    anchors: dict[int, Anchor],
    leaf_frames: dict[str, FrameBlock],
) -> FrameBlock:
    """Merge anchor payloads and leaf outputs; every frame written exactly once."""
    horizon = plan.horizon
    channels = FRAME_CHANNELS
    for block in leaf_frames.values():
        channels = block.channels
        break
    out = np.zeros((horizon, channels, 1, 1), dtype=np.float32)
    written = np.zeros(horizon, dtype=bool)

    def paint(interval: Interval, samples: np.ndarray, what: str) -> None:
        lo, hi = interval.start - 1, interval.end
        if written[lo:hi].any():
            raise ExecutionError(f"assembly overlap at {what} {interval.as_tuple()}")
        out[lo:hi] = samples
        written[lo:hi] = True

    for t in plan.hierarchy.finest():
        anchor = anchors.get(t)
        if anchor is None:
            raise ExecutionError(f"missing anchor at time {t}")
        paint(anchor.payload.interval, anchor.payload.samples, "anchor")
    for call in plan.leaf_calls():
        block = leaf_frames.get(call.call_id)
        if block is None:
            raise ExecutionError(f"missing leaf output {call.call_id}")
        paint(block.interval, block.samples, "leaf")
    if not written.all():
        gap = int(np.nonzero(~written)[0][0]) + 1
        raise ExecutionError(f"assembly gap at frame {gap}")
    return FrameBlock(
        interval=Interval(1, horizon), channels=channels, height=1, width=1, samples=out
    )


def run_ar(
    horizon: int,
    arcfg: ArConfig,
    backend: SyntheticBackend,
    conditioning: ConditioningTrack,
    seed: int,
) -> RunArtifact:
    """Sequential chunked rollout; chunk k starts only after k-1 finished."""
    if horizon < 1:
        raise ExecutionError("horizon must be >= 1")
    state = ArState(rng_state=seed & ((1 << 64) - 1), recent=(0.0,) * arcfg.carry_window)
    blocks: list[FrameBlock] = []
    trace: list[TraceEntry] = []
    resets: list[int] = []
    n_chunks = math.ceil(horizon / arcfg.chunk_len)
    for k in range(n_chunks):
        start = k * arcfg.chunk_len + 1
        end = min(horizon, (k + 1) * arcfg.chunk_len)
        block, state, chunk_resets = backend.ar_chunk(state, Interval(start, end), conditioning, arcfg)
        blocks.append(block)
        resets.extend(chunk_resets)
        trace.append(
            TraceEntry(
                call_id=f"chunk-{k:05d}",
                kind="leaf",
                level=0,
                start_tick=k,
                end_tick=k + 1,
                worker=0,
                seed=state.rng_state,
            )
        )
    samples = np.concatenate([b.samples for b in blocks], axis=0)
    frames = FrameBlock(
        interval=Interval(1, horizon),
        channels=blocks[0].channels,
        height=1,
        width=1,
        samples=samples,
    )
    return RunArtifact(
        method="ar",
        frames=frames,
        trace=tuple(trace),
        seed=seed,
        ar_config=arcfg,
        reset_frames=tuple(resets),
    )


def anchors_from_frames(plan: TreePlan, frames: FrameBlock) -> dict[int, Anchor]:
    """Rebuild anchor objects from assembled frames (payloads are canonical)."""
    out: dict[int, Anchor] = {}
    for level_idx, level in enumerate(plan.hierarchy.levels):
        for t in level:
            if t in out:
                continue
            piv = payload_interval(t, plan.limits.anchor_width, plan.horizon)
            out[t] = Anchor(
                time=t,
                width=plan.limits.anchor_width,
                level=level_idx,
                payload=frames.frame_slice(piv),
            )
    return out


@dataclass(frozen=True, slots=True)
class GateEntry:
    call_id: str
    interval: tuple[int, int]
    residual_before: float
    attempts: int
    residual_after: float
    cleared: bool


@dataclass(frozen=True)
class GateReport:
    threshold: float
    entries: tuple[GateEntry, ...]

    @property
    def flagged(self) -> tuple[str, ...]:
        return tuple(e.call_id for e in self.entries)


def _leaf_residual(frames: FrameBlock, conditioning: ConditioningTrack, interval: Interval) -> float:
    extracted = extract_conditioning(frames.frame_slice(interval))
    reference = conditioning.slice(interval)
    return float(np.mean(np.abs(extracted.data - reference.data)))


def gate_and_regenerate(
    run: RunArtifact,
    plan: TreePlan,
    backend: Backend,
    policy: ExecPolicy,
    conditioning: ConditioningTrack,
) -> tuple[RunArtifact, GateReport]:
    """Re-extract conditioning per leaf; regenerate leaves whose residual
    exceeds the gate threshold. Only flagged leaves' frames change."""
    if run.method != "ats":
        raise ExecutionError("gating applies to tree runs")
    theta = policy.gate_threshold
    anchors = anchors_from_frames(plan, run.frames)
    samples = run.frames.samples.copy()
    entries: list[GateEntry] = []
    for call in plan.leaf_calls():
        residual = _leaf_residual(run.frames, conditioning, call.interval)
        if not residual > theta:
            continue
        brackets = tuple(anchors[t] for t in call.bracket_times)
        attempts = 0
        best = residual
        for attempt in range(1, policy.retry_limit + 1):
            attempts = attempt
            retry_spec = replace(call, seed=mix_seed(call.seed, f"attempt:{attempt}"))
            result = backend.run_call(retry_spec, brackets, conditioning)
            assert result.frames is not None
            candidate = _leaf_residual(result.frames, conditioning, call.interval)
            if candidate < best:
                lo = call.interval.start - 1
                samples[lo : call.interval.end] = result.frames.samples
                best = candidate
            if best <= theta:
                break
        entries.append(
            GateEntry(
                call_id=call.call_id,
                interval=call.interval.as_tuple(),
                residual_before=residual,
                attempts=attempts,
                residual_after=best,
                cleared=best <= theta,
            )
        )
    if not entries:
        return run, GateReport(threshold=theta, entries=())
    frames = FrameBlock(
        interval=run.frames.interval,
        channels=run.frames.channels,
        height=1,
        width=1,
        samples=samples,
    )
    new_run = RunArtifact(
        method=run.method,
        frames=frames,
        trace=run.trace,
        seed=run.seed,
        plan=run.plan,
    )
    return new_run, GateReport(threshold=theta, entries=tuple(entries))


@dataclass(frozen=True, slots=True)
class SeamEntry:
    anchor_time: int
    before: float
    after: float
    repaired: bool


@dataclass(frozen=True)
class SeamReport:
    threshold: float
    entries: tuple[SeamEntry, ...]


def _seam_discrepancy(identity: np.ndarray, piv: Interval) -> float:
    """Mean of the left and right payload-edge identity steps."""
    left = abs(float(identity[piv.start - 2]) - float(identity[piv.start - 1]))
    right = abs(float(identity[piv.end - 1]) - float(identity[piv.end]))
    return 0.5 * (left + right)


def seam_scan_and_repair(
    run: RunArtifact,
    plan: TreePlan,
    backend: Backend,
    policy: ExecPolicy,
    conditioning: ConditioningTrack,
) -> tuple[RunArtifact, SeamReport]:
    """Scan interior anchors for identity discontinuities and inpaint them.

    The inpaint call spans [t - h, t + h] bracketed by the frames just
    outside; the anchor payload itself is never rewritten.
    """
    if run.method != "ats":
        raise ExecutionError("seam repair applies to tree runs")
    if not backend.capabilities().supports_inpaint:
        raise ExecutionError("backend does not support inpaint calls")
    finest = plan.hierarchy.finest()
    samples = run.frames.samples.copy()
    identity = run.frames.channel_values(IDENTITY_CHANNEL).astype(np.float64)
    anchors = anchors_from_frames(plan, run.frames)
    entries: list[SeamEntry] = []
    changed = False
    for t in finest[1:-1]:
        anchor = anchors[t]
        piv = anchor.payload.interval
        before = _seam_discrepancy(identity, piv)
        if not before > policy.seam_threshold:
            entries.append(SeamEntry(anchor_time=t, before=before, after=before, repaired=False))
            continue
        h = policy.seam_half_width
        h = min(h, piv.start - 2, plan.horizon - 1 - piv.end)
        prev_t = max(u for u in finest if u < t)
        next_t = min(u for u in finest if u > t)
        prev_edge = payload_interval(prev_t, plan.limits.anchor_width, plan.horizon).end
        next_edge = payload_interval(next_t, plan.limits.anchor_width, plan.horizon).start
        h = min(h, piv.start - prev_edge - 2, next_edge - piv.end - 2)
        if h < 1:
            entries.append(SeamEntry(anchor_time=t, before=before, after=before, repaired=False))
            continue
        lo, hi = piv.start - h, piv.end + h
        window = Interval(lo, hi)
        call_id = f"inpaint:{t}"
        spec = CallSpec(
            call_id=call_id,
            kind="inpaint_seam",
            level=plan.hierarchy.leaf_level,
            interval=window,
            bracket_times=(lo - 1, hi + 1),
            interior_times=(),
            conditioning_slice=window,
            seed=mix_seed(plan.seed_root, call_id),
        )
        bracket_l = _frame_anchor(run.frames, samples, lo - 1, plan.hierarchy.leaf_level)
        bracket_r = _frame_anchor(run.frames, samples, hi + 1, plan.hierarchy.leaf_level)
        result = backend.run_call(spec, (bracket_l, bracket_r), conditioning, context_anchor=anchor)
        assert result.frames is not None
        repaired = result.frames.samples.copy()
        # Keep the payload bytes exactly as they were.
        repaired[piv.start - lo : piv.end - lo + 1] = samples[piv.start - 1 : piv.end]
        samples[lo - 1 : hi] = repaired
        identity[lo - 1 : hi] = repaired[:, IDENTITY_CHANNEL, 0, 0]
        changed = True
        after = _seam_discrepancy(identity, piv)
        entries.append(SeamEntry(anchor_time=t, before=before, after=after, repaired=True))
    if not changed:
        return run, SeamReport(threshold=policy.seam_threshold, entries=tuple(entries))
    frames = FrameBlock(
        interval=run.frames.interval,
        channels=run.frames.channels,
        height=1,
        width=1,
        samples=samples,
    )
    new_run = RunArtifact(
        method=run.method,
        frames=frames,
        trace=run.trace,
        seed=run.seed,
        plan=run.plan,
    )
    return new_run, SeamReport(threshold=policy.seam_threshold, entries=tuple(entries))


def _frame_anchor(frames: FrameBlock, samples: np.ndarray, t: int, level: int) -> Anchor:
    block = FrameBlock(
        interval=Interval(t, t),
        channels=frames.channels,
        height=1,
        width=1,
        samples=np.ascontiguousarray(samples[t - 1 : t]),
    )
    return Anchor(time=t, width=1, level=level, payload=block)


# ---------------------------------------------------------------------------
# Run-directory layout: plan.json, frames.atsb, trace.csv, world.json,
# meta.json, plus gate.csv / seams.csv when those passes ran.

def write_run_dir(
    out_dir: str | Path,
    artifact: RunArtifact,
    world: SyntheticWorldConfig,
    gate_report: GateReport | None = None,
    seam_report: SeamReport | None = None,
) -> Path:
    from .planner import save_plan  # local import to avoid a cycle

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_frame_block(out / "frames.atsb", artifact.frames)
    if artifact.plan is not None:
        save_plan(out / "plan.json", artifact.plan)
    meta = {
        "method": artifact.method,
        "horizon": artifact.frames.interval.end,
        "seed": artifact.seed,
        "reset_frames": list(artifact.reset_frames),
    }
    if artifact.ar_config is not None:
        meta["ar_config"] = {
            "chunk_len": artifact.ar_config.chunk_len,
            "reset_period_frames": artifact.ar_config.reset_period_frames,
            "carry_window": artifact.ar_config.carry_window,
            "variant": artifact.ar_config.variant,
        }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    (out / "world.json").write_text(json.dumps(world.to_dict(), indent=2) + "\n", encoding="utf-8")
    with (out / "trace.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["call_id", "kind", "level", "start_tick", "end_tick", "worker", "seed"])
        for e in artifact.trace:
            writer.writerow([e.call_id, e.kind, e.level, e.start_tick, e.end_tick, e.worker, e.seed])
    if gate_report is not None:
        with (out / "gate.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["call_id", "residual_before", "attempts", "residual_after", "cleared"])
            for g in gate_report.entries:
                writer.writerow(
                    [g.call_id, f"{g.residual_before:.9g}", g.attempts, f"{g.residual_after:.9g}", int(g.cleared)]
                )
    if seam_report is not None:
        with (out / "seams.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["anchor_time", "before", "after", "repaired"])
            for s in seam_report.entries:
                writer.writerow([s.anchor_time, f"{s.before:.9g}", f"{s.after:.9g}", int(s.repaired)])
    return out


def load_run_dir(run_dir: str | Path) -> tuple[FrameBlock, dict, SyntheticWorldConfig]:
    run = Path(run_dir)
    meta = json.loads((run / "meta.json").read_text(encoding="utf-8"))
    world = SyntheticWorldConfig.from_dict(json.loads((run / "world.json").read_text(encoding="utf-8")))
    frames = read_frame_block(run / "frames.atsb")
    return frames, meta, world
