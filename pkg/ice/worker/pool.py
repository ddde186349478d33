"""
Thread pool for independent Monte Carlo trials

Every trial derives its own generator from (seed, trial index), so results
do not depend on the worker count or on completion order.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, TypeVar
import logging

from ice.app.config import get_settings
from ice.processing.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def resolve_worker_count(workers: Optional[int] = None) -> int:
    """Explicit count, else ICE_THREADS from the settings"""
    if workers is None:
        workers = get_settings().ICE_THREADS
    if workers < 1:
        raise ConfigurationError(f"Worker count must be at least 1, got {workers}")
    return int(workers)


def run_trials(fn: Callable[[int], T], n_trials: int, workers: Optional[int] = None) -> List[T]:
    """
    Run fn(t) for t = 0 .. n_trials - 1 and return results in trial order

    Args:
        fn: Trial function of the trial index
        n_trials: Number of trials
        workers: Thread count (defaults to ICE_THREADS)

    Returns:
        List of trial results indexed by trial
    """
    workers = resolve_worker_count(workers)
    if n_trials <= 0:
        return []
    if workers == 1 or n_trials == 1:
        return [fn(t) for t in range(n_trials)]

    results: List[Optional[T]] = [None] * n_trials
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(fn, t): t for t in range(n_trials)}
        for future in as_completed(futures):
            t = futures[future]
            try:
                results[t] = future.result()
            except Exception:
                logger.error(f"Trial {t} failed", exc_info=True)
                for pending in futures:
                    pending.cancel()
                raise
    logger.debug(f"Completed {n_trials} trials on {workers} threads")
    return results
