import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Tuple, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

MIN_CHUNK = 4096


def default_threads() -> int:
    raw = os.environ.get("VNS_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("Ignoring VNS_THREADS=%r (not an integer)", raw)
    return 1


def chunk_bounds(n: int, chunks: int) -> List[Tuple[int, int]]:
    chunks = max(1, min(chunks, n)) if n > 0 else 1
    step, extra = divmod(n, chunks)
    bounds = []
    lo = 0
    for i in range(chunks):
        hi = lo + step + (1 if i < extra else 0)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def chunked_map(fn: Callable[[int, int], T], n: int, threads: int = 1,
                deterministic: bool = True, min_chunk: int = MIN_CHUNK) -> List[T]:
    """Apply fn(lo, hi) over index ranges covering [0, n).

    Results come back in chunk order when ``deterministic`` is set and in
    completion order otherwise; callers that reduce must not rely on the
    latter being stable.
    """
    chunks = max(1, min(threads, n // max(1, min_chunk)))
    bounds = chunk_bounds(n, chunks)
    if chunks == 1:
        return [fn(lo, hi) for lo, hi in bounds]

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        if deterministic:
            return [f.result() for f in futures]
        return [f.result() for f in as_completed(futures)]
