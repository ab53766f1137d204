import logging
from typing import Callable, List, Optional, Sequence, TypeVar

from joblib import Parallel, delayed

from config import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(func: Callable[[T], R], items: Sequence[T], n_jobs: Optional[int] = None) -> List[R]:
    """Apply func to every item, possibly in parallel.

    Results are returned in the order of ``items`` whatever the execution
    order, so callers can assemble tables deterministically. ``func`` must be
    a module-level callable so the loky backend can pickle it.
    """
    n_jobs = config.MAX_WORKERS if n_jobs is None else n_jobs
    items = list(items)
    if n_jobs == 1 or len(items) <= 1:
        return [func(item) for item in items]

    logger.debug(f"Dispatching {len(items)} tasks to {n_jobs} workers")
    return Parallel(n_jobs=n_jobs, backend="loky")(delayed(func)(item) for item in items)
