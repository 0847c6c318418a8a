"""Deterministic parallel map over independent tasks.

Results always come back in task order regardless of worker count, so any
reduction over them is schedule-independent. ``jobs <= 1`` bypasses process
creation entirely.
"""

from __future__ import annotations

import concurrent.futures


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Apply ``fn`` to each item, preserving input order in the result."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    workers = min(jobs, len(items))
    chunk = max(1, len(items) // (4 * workers))
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
