"""Order-preserving parallel map used by the scans."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def ordered_map(fn, items, jobs: int = 1) -> list:
    """``[fn(*it) for it in items]``, optionally across processes.

    Results come back in input order whatever ``jobs`` is, so reductions over
    them are independent of the parallelism degree.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, *zip(*items)))
