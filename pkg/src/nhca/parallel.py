"""Deterministic map over work items, optionally threaded.

Results come back in input order, so aggregates do not depend on the thread
count; per-item computations are pure numpy and release the GIL.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "NHCA_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    if threads is not None and threads > 0:
        return threads
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            v = int(env)
            if v > 0:
                return v
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_map(fn, items, threads: int | None = None) -> list:
    items = list(items)
    n = resolve_threads(threads)
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
