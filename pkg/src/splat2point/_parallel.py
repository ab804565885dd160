from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 4096


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("G2P_THREADS", "1")))
    except ValueError:
        return 1


def chunk_bounds(n: int, chunk: int | None = None) -> list[tuple[int, int]]:
    """Fixed chunking: boundaries depend only on ``n``, never on thread count."""
    chunk = chunk or CHUNK
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def map_chunks(fn, n: int, threads: int | None = None, chunk: int | None = None) -> list:
    """Apply ``fn(start, stop)`` over fixed chunks, results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
