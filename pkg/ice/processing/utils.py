"""
Utility functions shared by the estimators: seeded generators, Gaussian
densities and jittered Cholesky factorization
"""

import logging
from typing import Optional

import numpy as np
from scipy import linalg

from ice.processing.exceptions import NumericalError

logger = logging.getLogger(__name__)

# Probabilities below this are treated as this value before taking logs
PROB_FLOOR = 1e-300
LOG_FLOOR = float(np.log(PROB_FLOOR))

CHOLESKY_JITTER = 1e-10
LOG_2PI = float(np.log(2.0 * np.pi))


def db_to_linear(value_db: float) -> float:
    """Convert a power ratio in dB to linear scale"""
    return float(10.0 ** (value_db / 10.0))


def trial_rng(seed: int, *indices: int) -> np.random.Generator:
    """
    Counter-based generator for one Monte Carlo work item

    The stream depends only on (seed, indices), so trials can be evaluated in
    any order or on any worker and still reproduce bit-identical draws.

    Args:
        seed: Master seed
        indices: Trial index and any further coordinates (e.g. context length)

    Returns:
        Independent numpy Generator
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(i) for i in indices]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def cholesky_lower(matrix: np.ndarray, context: Optional[str] = None) -> np.ndarray:
    """
    Lower Cholesky factor with a single jitter retry

    Args:
        matrix: Symmetric matrix expected to be positive definite
        context: Extra text for the error message (e.g. "theta=5, n_len=30")

    Returns:
        Lower-triangular factor L with L @ L.T == matrix (+ jitter)

    Raises:
        NumericalError: if the matrix is not PD even after adding jitter
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError:
        pass

    logger.warning(
        f"Cholesky failed for {matrix.shape[0]}x{matrix.shape[0]} matrix"
        f"{' (' + context + ')' if context else ''}, retrying with jitter {CHOLESKY_JITTER:g}"
    )
    jittered = matrix + CHOLESKY_JITTER * np.eye(matrix.shape[0])
    try:
        return linalg.cholesky(jittered, lower=True)
    except linalg.LinAlgError as e:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(matrix)
        message = f"Matrix is not positive definite after jitter (condition number {cond:.3e})"
        if context:
            message += f"; {context}"
        raise NumericalError(message) from e


def cholesky_solve(factor: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = rhs given the lower factor L"""
    return linalg.cho_solve((factor, True), rhs)


def gaussian_logpdf(v: np.ndarray, cov: np.ndarray, context: Optional[str] = None) -> float:
    """
    Log-density of a zero-mean Gaussian evaluated at v

    Uses the triangular factor of the covariance; no explicit inverse is formed.

    Args:
        v: Real m-vector
        cov: Real m x m symmetric positive definite covariance

    Returns:
        -1/2 (m log 2pi + log det cov + v^T cov^-1 v)
    """
    v = np.asarray(v, dtype=float).ravel()
    m = v.size
    if m == 0:
        return 0.0

    L = cholesky_lower(cov, context)
    alpha = linalg.solve_triangular(L, v, lower=True)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (m * LOG_2PI + log_det + alpha @ alpha))
