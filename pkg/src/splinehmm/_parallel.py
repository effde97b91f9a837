"""Tiny deterministic process-pool wrapper.

Results always come back in submission order, so aggregation is independent
of completion order; ``workers <= 1`` degrades to a plain map, which keeps
single-process runs easy to debug and exactly reproducible.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, workers: int = 1):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
