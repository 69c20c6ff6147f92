"""Chunked element loops with an optional thread pool.

Chunk boundaries depend only on the problem size, never on the worker count,
and results are concatenated in chunk order, so output is bitwise identical
for any number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
import os

import numpy as np

CHUNK = 2048
ENV_VAR = "CHNS_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(ENV_VAR, "1")))
    except ValueError:
        return 1


def map_chunks(func, n: int) -> np.ndarray:
    """Evaluate ``func(start, stop)`` on fixed chunks of ``range(n)`` and concatenate."""
    bounds = [(i, min(i + CHUNK, n)) for i in range(0, n, CHUNK)]
    w = worker_count()
    if w > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=w) as pool:
            parts = list(pool.map(lambda b: func(*b), bounds))
    else:
        parts = [func(*b) for b in bounds]
    return np.concatenate(parts, axis=0)
