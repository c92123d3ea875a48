/**
 * 64-bit seed mixing, bit-compatible with the engine's published mixer:
 * FNV-1a over the UTF-8 label bytes seeded with the root seed, then the
 * splitmix64 finalizer. Shared test vectors live in
 * vectors/mix_seed_vectors.json at the repository root.
 */

const MASK = (1n << 64n) - 1n;
const FNV_PRIME = 0x100000001b3n;

export function finalize64(z: bigint): bigint {
  z &= MASK;
  z ^= z >> 30n;
  z = (z * 0xbf58476d1ce4e5b9n) & MASK;
  z ^= z >> 27n;
  z = (z * 0x94d049bb133111ebn) & MASK;
  return z ^ (z >> 31n);
}

export function mixSeed(rootSeed: bigint, label: string | Uint8Array): bigint {
  const bytes = typeof label === "string" ? new TextEncoder().encode(label) : label;
  let h = rootSeed & MASK;
  for (const b of bytes) {
    h = ((h ^ BigInt(b)) * FNV_PRIME) & MASK;
  }
  return finalize64(h);
}
