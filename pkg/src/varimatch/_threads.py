"""Deterministic row-block parallelism for pairwise kernel sums.

VARIMATCH_THREADS caps the worker threads (default 1).  Each block fills
a disjoint row slice of preallocated output arrays, so results are
bit-identical regardless of scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor

_BLOCK_ENTRIES = 1 << 22  # pairwise entries per row block


def worker_count():
    raw = os.environ.get("VARIMATCH_THREADS", "")
    if not raw.strip():
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"VARIMATCH_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("VARIMATCH_THREADS must be >= 1")
    return min(n, os.cpu_count() or 1)


def row_blocks(n_rows, n_cols):
    """Split rows so each block holds at most _BLOCK_ENTRIES pairs."""
    if n_rows == 0:
        return []
    step = max(1, _BLOCK_ENTRIES // max(1, n_cols))
    return [(i, min(i + step, n_rows)) for i in range(0, n_rows, step)]


def run_blocks(fn, blocks):
    """Run fn(i0, i1) on each block, threaded when requested."""
    workers = worker_count()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda b: fn(*b), blocks))
    else:
        for i0, i1 in blocks:
            fn(i0, i1)
