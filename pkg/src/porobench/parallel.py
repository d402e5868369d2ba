"""Process-wide worker pool used by assembly and sparse kernels."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "POROBENCH_THREADS"

_threads = max(1, int(os.environ.get(ENV_THREADS, "1") or 1))
_pool: ThreadPoolExecutor | None = None


def get_num_threads() -> int:
    return _threads


def set_num_threads(n: int) -> None:
    global _threads, _pool
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be at least 1")
    if n != _threads and _pool is not None:
        _pool.shutdown(wait=True)
        _pool = None
    _threads = n


def run_chunks(fn, chunks):
    """Run ``fn`` on every chunk, in order, on the worker pool; returns the results."""
    global _pool
    chunks = list(chunks)
    if _threads == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    if _pool is None:
        _pool = ThreadPoolExecutor(max_workers=_threads)
    return list(_pool.map(fn, chunks))
