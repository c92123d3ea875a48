/**
 * Noise-free synthetic generation.
 *
 * Frames carry two channels: structure (0) copied from the conditioning
 * track, identity (1) linearly interpolated between bracket identities.
 * All math runs in float64 with the exact expression
 * u_a + (u_b - u_a) * ((t - t_a) / (t_b - t_a)) and is rounded to float32
 * on store, which is what makes outputs byte-equal to the engine's
 * in-process backend at zero noise.
 */

import { FrameBlock } from "./codec.js";

export const STRUCT_CHANNEL = 0;
export const IDENTITY_CHANNEL = 1;
export const FRAME_CHANNELS = 2;

export class GenerateError extends Error {}

export interface Anchor {
  time: number;
  width: number;
  block: FrameBlock;
  /** first frame of the payload on the absolute axis */
  start: number;
}

export interface Conditioning {
  start: number;
  /** channel-0 values, one per frame from `start` */
  values: Float32Array;
}

export function payloadStart(time: number, width: number): number {
  return Math.max(1, time - Math.floor(width / 2));
}

export function anchorFromBlock(time: number, width: number, block: FrameBlock): Anchor {
  if (block.frames !== width) {
    throw new GenerateError(`payload has ${block.frames} frames, anchor width is ${width}`);
  }
  if (block.channels !== FRAME_CHANNELS || block.height !== 1 || block.width !== 1) {
    throw new GenerateError("anchor payload must be (width, 2, 1, 1)");
  }
  return { time, width, block, start: payloadStart(time, width) };
}

export function conditioningFromBlock(start: number, block: FrameBlock): Conditioning {
  if (block.height !== 1 || block.width !== 1 || block.channels < 1) {
    throw new GenerateError("conditioning block must be (frames, channels, 1, 1)");
  }
  const values = new Float32Array(block.frames);
  for (let i = 0; i < block.frames; i++) {
    values[i] = block.samples[i * block.channels]!;
  }
  return { start, values };
}

function condAt(cond: Conditioning, t: number): number {
  const idx = t - cond.start;
  const v = cond.values[idx];
  if (v === undefined) {
    throw new GenerateError(`frame ${t} outside conditioning slice`);
  }
  return v;
}

function anchorIdentity(anchor: Anchor): number {
  return anchor.block.samples[IDENTITY_CHANNEL]!;
}

function lastIdentity(anchor: Anchor): number {
  return anchor.block.samples[(anchor.width - 1) * FRAME_CHANNELS + IDENTITY_CHANNEL]!;
}

function lerp(ua: number, ub: number, ta: number, tb: number, t: number): number {
  return ua + (ub - ua) * ((t - ta) / (tb - ta));
}

function denseBlock(n: number): FrameBlock {
  return {
    frames: n,
    channels: FRAME_CHANNELS,
    height: 1,
    width: 1,
    samples: new Float32Array(n * FRAME_CHANNELS),
  };
}

function emit(block: FrameBlock, i: number, structure: number, identity: number): void {
  block.samples[i * FRAME_CHANNELS + STRUCT_CHANNEL] = structure;
  block.samples[i * FRAME_CHANNELS + IDENTITY_CHANNEL] = identity;
}

/** Anchor payload: constant identity, structure from the anchor time. */
function payloadBlock(time: number, width: number, identity: number, cond: Conditioning): FrameBlock {
  const block = denseBlock(width);
  const structure = condAt(cond, time);
  for (let i = 0; i < width; i++) {
    emit(block, i, structure, identity);
  }
  return block;
}

export function generateRoot(
  interior: number[],
  cond: Conditioning,
  anchorWidth: number,
): { time: number; width: number; block: FrameBlock }[] {
  if (interior.length === 0) {
    throw new GenerateError("root call with no times");
  }
  // Zero noise: the shared bias and per-anchor noise are both exactly 0.
  return interior.map((t) => ({
    time: t,
    width: anchorWidth,
    block: payloadBlock(t, anchorWidth, 0.0, cond),
  }));
}

export function generateRefine(
  interior: number[],
  brackets: [Anchor, Anchor],
  cond: Conditioning,
  anchorWidth: number,
): { time: number; width: number; block: FrameBlock }[] {
  const [a, b] = brackets;
  if (interior.length === 0) {
    throw new GenerateError("refine call with no interior times");
  }
  for (const t of interior) {
    if (t <= a.time || t >= b.time) {
      throw new GenerateError(`interior time ${t} outside bracket span`);
    }
  }
  const ua = anchorIdentity(a);
  const ub = anchorIdentity(b);
  return interior.map((t) => ({
    time: t,
    width: anchorWidth,
    block: payloadBlock(t, anchorWidth, lerp(ua, ub, a.time, b.time, t), cond),
  }));
}

export function generateLeaf(
  interval: [number, number],
  brackets: [Anchor, Anchor] | null,
  cond: Conditioning,
): FrameBlock {
  const [lo, hi] = interval;
  const n = hi - lo + 1;
  const block = denseBlock(n);
  if (brackets) {
    const [a, b] = brackets;
    if (lo <= a.start + a.width - 1 || hi >= b.start) {
      throw new GenerateError("leaf interval overlaps bracket payloads");
    }
    const ua = anchorIdentity(a);
    const ub = anchorIdentity(b);
    for (let i = 0; i < n; i++) {
      const t = lo + i;
      emit(block, i, condAt(cond, t), lerp(ua, ub, a.time, b.time, t));
    }
  } else {
    // Degenerate single-call plan: zero-noise shared bias is exactly 0.
    for (let i = 0; i < n; i++) {
      emit(block, i, condAt(cond, lo + i), 0.0);
    }
  }
  return block;
}

export function generateInpaint(
  interval: [number, number],
  brackets: [Anchor, Anchor],
  context: Anchor,
  cond: Conditioning,
): FrameBlock {
  const [lo, hi] = interval;
  const [left, right] = brackets;
  const pvStart = context.start;
  const pvEnd = context.start + context.width - 1;
  if (!(left.time < pvStart && right.time > pvEnd)) {
    throw new GenerateError("inpaint brackets must enclose the anchor payload");
  }
  if (lo !== left.time + 1 || hi !== right.time - 1) {
    throw new GenerateError("inpaint interval must abut its brackets");
  }
  const n = hi - lo + 1;
  const block = denseBlock(n);
  const uL = anchorIdentity(left);
  const uR = anchorIdentity(right);
  const pLeft = anchorIdentity(context);
  const pRight = lastIdentity(context);
  for (let i = 0; i < n; i++) {
    const t = lo + i;
    if (t < pvStart) {
      emit(block, i, condAt(cond, t), lerp(uL, pLeft, left.time, pvStart, t));
    } else if (t > pvEnd) {
      emit(block, i, condAt(cond, t), lerp(pRight, uR, pvEnd, right.time, t));
    } else {
      // Payload frames are canonical: copy both channels bit-exactly.
      const j = t - pvStart;
      block.samples[i * FRAME_CHANNELS + STRUCT_CHANNEL] =
        context.block.samples[j * FRAME_CHANNELS + STRUCT_CHANNEL]!;
      block.samples[i * FRAME_CHANNELS + IDENTITY_CHANNEL] =
        context.block.samples[j * FRAME_CHANNELS + IDENTITY_CHANNEL]!;
    }
  }
  return block;
}
