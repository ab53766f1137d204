import logging
import time
from contextlib import contextmanager
from typing import Iterator

logger = logging.getLogger(__name__)


@contextmanager
def track_stage(stage: str) -> Iterator[None]:
    """Log start, end and wall time of a pipeline stage"""
    logger.info(f"Stage '{stage}' started")
    start = time.perf_counter()
    try:
        yield
    except Exception as e:
        logger.error(f"Stage '{stage}' failed after {time.perf_counter() - start:.2f}s: {e}")
        raise
    logger.info(f"Stage '{stage}' finished in {time.perf_counter() - start:.2f}s")
