"""Order-preserving process pool for embarrassingly parallel sweeps."""

import os
from concurrent.futures import ProcessPoolExecutor


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def parallel_map(fn, items, jobs=1):
    """``[fn(x) for x in items]``, optionally across ``jobs`` processes; result order is input order."""
    items = list(items)
    jobs = default_jobs() if jobs is None or jobs <= 0 else int(jobs)
    if jobs == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))
