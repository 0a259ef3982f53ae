"""Thread-count configuration and an order-preserving parallel map."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "KOSHELEV_NUM_THREADS"


def num_threads() -> int:
    """Worker count from ``KOSHELEV_NUM_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def ordered_map(fn, items, chunksize: int = 1) -> list:
    """``[fn(x) for x in items]``, threaded when more than one worker is configured.

    Results come back in input order, so reductions over them are
    independent of the worker count.
    """
    items = list(items)
    workers = min(num_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
