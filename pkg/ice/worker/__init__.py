"""
Worker package initialization
"""

from ice.worker.pool import resolve_worker_count, run_trials

__all__ = [
    "resolve_worker_count",
    "run_trials",
]
