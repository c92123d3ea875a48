"""Counter-based random number generation.

Every draw is a pure function of (seed, frame, key, draw-index), so results
do not depend on evaluation order, chunking, or worker count. The word
function absorbs each counter into a 64-bit state with the splitmix64
finalizer; exact constants are listed below and mirrored in the seed mixer
(see protocol.mix_seed).

    finalize(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
                 z ^= z >> 27; z *= 0x94D049BB133111EB
                 z ^= z >> 31                       (all mod 2^64)

    word(seed, frame, key, draw):
        x = (seed + 0x9E3779B97F4A7C15) mod 2^64
        x = finalize(x ^ (frame * 0xD6E8FEB86659FD93 mod 2^64))
        x = finalize(x ^ (key   * 0xA24BAED4963EE407 mod 2^64))
        x = finalize(x ^ (draw  * 0x9FB21C651E98DF25 mod 2^64))

Normal deviates come from Box-Muller over two words (draw indices 2k and
2k+1 for draw stream k).
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
FRAME_MULT = 0xD6E8FEB86659FD93
KEY_MULT = 0xA24BAED4963EE407
DRAW_MULT = 0x9FB21C651E98DF25

_U = np.uint64


def finalize64(x: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2^64)."""
    x &= MASK64
    x ^= x >> 30
    x = (x * MIX1) & MASK64
    x ^= x >> 27
    x = (x * MIX2) & MASK64
    x ^= x >> 31
    return x


def _finalize_arr(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> _U(30))
    x = x * _U(MIX1)
    x = x ^ (x >> _U(27))
    x = x * _U(MIX2)
    x = x ^ (x >> _U(31))
    return x


def words(seed: int, frames: np.ndarray, key: int, draw: int) -> np.ndarray:
    """One 64-bit word per frame for the given (seed, key, draw) stream."""
    frames = np.asarray(frames, dtype=np.uint64)
    x = np.full(frames.shape, (seed + GOLDEN) & MASK64, dtype=np.uint64)
    x = _finalize_arr(x ^ (frames * _U(FRAME_MULT)))
    x = _finalize_arr(x ^ _U((key * KEY_MULT) & MASK64))
    x = _finalize_arr(x ^ _U((draw * DRAW_MULT) & MASK64))
    return x


def word(seed: int, frame: int, key: int, draw: int) -> int:
    x = (seed + GOLDEN) & MASK64
    x = finalize64(x ^ ((frame * FRAME_MULT) & MASK64))
    x = finalize64(x ^ ((key * KEY_MULT) & MASK64))
    x = finalize64(x ^ ((draw * DRAW_MULT) & MASK64))
    return x


def _unit_open(w: np.ndarray) -> np.ndarray:
    """Map words to doubles in (0, 1]."""
    return ((w >> _U(11)).astype(np.float64) + 1.0) * (2.0**-53)


def _unit_half_open(w: np.ndarray) -> np.ndarray:
    """Map words to doubles in [0, 1)."""
    return (w >> _U(11)).astype(np.float64) * (2.0**-53)


def standard_normal(seed: int, frames: np.ndarray, key: int, stream: int = 0) -> np.ndarray:
    """Standard normal per frame, keyed by (seed, frame, key, stream)."""
    frames = np.asarray(frames, dtype=np.uint64)
    u1 = _unit_open(words(seed, frames, key, 2 * stream))
    u2 = _unit_half_open(words(seed, frames, key, 2 * stream + 1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def normal_scalar(seed: int, frame: int, key: int, stream: int = 0) -> float:
    return float(standard_normal(seed, np.asarray([frame]), key, stream)[0])
