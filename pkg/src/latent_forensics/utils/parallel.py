import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor

logger = logging.getLogger(__name__)


def parallel_map[T, R](fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> list[R]:
    """
    Map `fn` over `items`, in worker processes when `workers > 1`.

    Results always come back in input order. `fn` must be a picklable module-level
    callable when running in parallel.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Mapping {len(items)} items over {workers} workers")
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
