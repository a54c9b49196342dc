import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "POSELIFT_THREADS"


def resolve_threads(threads=None) -> int:
    """Explicit value, then $POSELIFT_THREADS, then the usable CPU count."""
    if threads is None:
        env = os.environ.get(ENV_THREADS, "").strip()
        if env:
            threads = int(env)
    if threads is None:
        try:
            threads = len(os.sched_getaffinity(0))
        except AttributeError:
            threads = os.cpu_count() or 1
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def ordered_map(fn, items, threads=None):
    """``list(map(fn, items))`` run on a thread pool; output order matches input."""
    items = list(items)
    n = min(resolve_threads(threads), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(n) as pool:
        return list(pool.map(fn, items))
