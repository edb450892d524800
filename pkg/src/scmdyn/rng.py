"""Counter-based uniform substreams.

Every random number used by the engine is addressed by a key and a position.
The key is a 128-bit digest of a tuple of labels (master seed, stream purpose,
node id, ...) and the position is an integer counter; the value at a given
address is a pure function of the address. Drawing a block of worlds therefore
yields the same numbers whatever the chunking or thread schedule.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

_RAW_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter increment
_INV_2_52 = 1.0 / 4503599627370496.0


@lru_cache(maxsize=4096)
def stream_key(*labels) -> int:
    """Derive a 128-bit Philox key from an arbitrary tuple of labels."""
    text = "\x1f".join(repr(label) for label in labels)
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=16).digest(), "little")


def raw_block(key: int, start: int, count: int) -> np.ndarray:
    """Return raw 64-bit words ``start .. start+count-1`` of stream ``key``."""
    if start < 0 or count < 0:
        raise ValueError("start and count must be non-negative")
    gen = np.random.Philox(key=key)
    skip_blocks, offset = divmod(start, _RAW_PER_BLOCK)
    if skip_blocks:
        gen.advance(skip_blocks)
    return gen.random_raw(offset + count)[offset:]


def to_open_unit(raw: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles strictly inside (0, 1)."""
    # 52 bits so that k + 0.5 stays exact and the result never rounds to 1
    return ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * _INV_2_52


def uniform_block(key: int, start: int, count: int) -> np.ndarray:
    return to_open_unit(raw_block(key, start, count))


def uniforms_for_worlds(key: int, world_ids: np.ndarray, width: int) -> np.ndarray:
    """Uniforms of shape ``(len(world_ids), width)``.

    Row ``i`` holds positions ``world_ids[i] * width .. + width - 1``. Contiguous
    runs of world ids are fetched with a single generator.
    """
    world_ids = np.asarray(world_ids, dtype=np.int64)
    out = np.empty((len(world_ids), width), dtype=np.float64)
    if len(world_ids) == 0 or width == 0:
        return out
    breaks = np.flatnonzero(np.diff(world_ids) != 1) + 1
    starts = np.concatenate(([0], breaks))
    stops = np.concatenate((breaks, [len(world_ids)]))
    for lo, hi in zip(starts, stops):
        first = int(world_ids[lo])
        out[lo:hi] = uniform_block(key, first * width, (hi - lo) * width).reshape(hi - lo, width)
    return out
