"""Fixed-chunk parallel map.

Chunk boundaries depend only on the problem size, never on the worker count,
and results come back in chunk order. Any reduction that combines per-chunk
partials in that order is therefore bit-identical for every thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

CHUNK = 8192


def chunk_slices(n: int, chunk: int = CHUNK) -> list[slice]:
    return [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_chunks(fn: Callable[[slice], T], n: int, threads: int = 1) -> list[T]:
    slices = chunk_slices(n)
    if threads <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))
