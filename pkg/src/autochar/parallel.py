"""Thread-pool helper honoring the AUTOCHAR_THREADS cap."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(requested: int | None = None) -> int:
    """Effective worker count: explicit request, else env cap, else CPU count."""
    if requested is not None and requested > 0:
        n = requested
    else:
        env = os.environ.get("AUTOCHAR_THREADS", "")
        n = int(env) if env.isdigit() and int(env) > 0 else (os.cpu_count() or 1)
    return max(1, n)


def parallel_map(fn, items, threads: int | None = None):
    """Map fn over items, preserving input order in the returned list."""
    items = list(items)
    workers = min(thread_count(threads), max(1, len(items)))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
