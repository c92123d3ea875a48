/**
 * ATSB frame-block codec.
 *
 * Layout: magic "ATSB", version u32=1, frames u32, channels u32, height
 * u32, width u32, dtype u32 (0 = float32 little-endian), reserved u32=0,
 * then samples in frame -> channel -> row -> column order. All integers
 * little-endian.
 */

export const HEADER_SIZE = 32;
export const ATSB_VERSION = 1;
export const DTYPE_F32LE = 0;

const MAGIC = "ATSB";

export interface FrameBlock {
  frames: number;
  channels: number;
  height: number;
  width: number;
  /** length = frames * channels * height * width */
  samples: Float32Array;
}

export class CodecError extends Error {}

export function encodeFrameBlock(block: FrameBlock): Buffer {
  const { frames, channels, height, width, samples } = block;
  const count = frames * channels * height * width;
  if (samples.length !== count) {
    throw new CodecError(`sample count ${samples.length} != ${count}`);
  }
  const buf = Buffer.alloc(HEADER_SIZE + 4 * count);
  buf.write(MAGIC, 0, "ascii");
  buf.writeUInt32LE(ATSB_VERSION, 4);
  buf.writeUInt32LE(frames, 8);
  buf.writeUInt32LE(channels, 12);
  buf.writeUInt32LE(height, 16);
  buf.writeUInt32LE(width, 20);
  buf.writeUInt32LE(DTYPE_F32LE, 24);
  buf.writeUInt32LE(0, 28);
  for (let i = 0; i < count; i++) {
    buf.writeFloatLE(samples[i]!, HEADER_SIZE + 4 * i);
  }
  return buf;
}

export function decodeFrameBlock(buf: Buffer): FrameBlock {
  if (buf.length < HEADER_SIZE) {
    throw new CodecError(`truncated header: ${buf.length} bytes`);
  }
  if (buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new CodecError("bad magic");
  }
  const version = buf.readUInt32LE(4);
  if (version !== ATSB_VERSION) {
    throw new CodecError(`unsupported version ${version}`);
  }
  const frames = buf.readUInt32LE(8);
  const channels = buf.readUInt32LE(12);
  const height = buf.readUInt32LE(16);
  const width = buf.readUInt32LE(20);
  const dtype = buf.readUInt32LE(24);
  const reserved = buf.readUInt32LE(28);
  if (dtype !== DTYPE_F32LE) {
    throw new CodecError(`unsupported dtype code ${dtype}`);
  }
  if (reserved !== 0) {
    throw new CodecError(`nonzero reserved field ${reserved}`);
  }
  const count = frames * channels * height * width;
  if (buf.length !== HEADER_SIZE + 4 * count) {
    throw new CodecError(`payload size ${buf.length} != ${HEADER_SIZE + 4 * count}`);
  }
  const samples = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    samples[i] = buf.readFloatLE(HEADER_SIZE + 4 * i);
  }
  return { frames, channels, height, width, samples };
}
