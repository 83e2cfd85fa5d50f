"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream, block)``.  Paths are processed in fixed-size blocks, so the
numbers a given path sees depend only on the seed, the purpose of the draw
and the block the path falls in -- never on thread count or execution order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

STREAMS = {
    "factor": 1,
    "asset": 2,
    "wealth": 3,
    "put": 4,
    "obpi": 5,
    "dual_mc": 6,
    "girsanov": 7,
    "dispersion": 8,
}

DEFAULT_BLOCK = 4096

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1


def stream_key(seed: int, stream: str | int, block: int = 0) -> int:
    sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return (int(seed) & _MASK64) | ((sid & _MASK32) << 64) | ((int(block) & _MASK32) << 96)


def generator(seed: int, stream: str | int, block: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream, block)))


def block_ranges(n_paths: int, block_size: int = DEFAULT_BLOCK) -> list[tuple[int, int, int]]:
    """(block index, start, stop) triples covering ``range(n_paths)``."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    out = []
    for b, start in enumerate(range(0, n_paths, block_size)):
        out.append((b, start, min(start + block_size, n_paths)))
    return out


def map_blocks(
    fn: Callable[[int, int, int], T],
    n_paths: int,
    block_size: int = DEFAULT_BLOCK,
    threads: int = 1,
) -> list[T]:
    """Apply ``fn(block, start, stop)`` to each block; results in block order."""
    ranges = block_ranges(n_paths, block_size)
    if threads <= 1 or len(ranges) == 1:
        return [fn(*r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))
