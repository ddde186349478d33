"""
Estimators that know the realized channel: true posterior, conditional-mean
symbol, instantaneous SNR and the binary antipodal tanh estimate
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ice.processing.channel import Constellation, NoiseSpec
from ice.processing.exceptions import NumericalError
from ice.processing.utils import LOG_FLOOR

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Posterior:
    """Distribution over symbol indices, stored as normalized log-probabilities"""
    log_probs: np.ndarray

    @classmethod
    def from_log_scores(cls, scores: np.ndarray) -> "Posterior":
        """
        Normalize unnormalized log-scores with a max-shifted logsumexp

        Entries are floored at log(1e-300) so every coordinate stays finite.
        """
        scores = np.asarray(scores, dtype=float)
        if np.any(np.isnan(scores)) or not np.any(np.isfinite(scores)):
            raise NumericalError(f"Posterior scores are not normalizable: {scores}")
        log_probs = np.maximum(scores - logsumexp(scores), LOG_FLOOR)
        log_probs.setflags(write=False)
        return cls(log_probs)

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "Posterior":
        with np.errstate(divide="ignore"):
            return cls.from_log_scores(np.log(np.asarray(probs, dtype=float)))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def size(self) -> int:
        return int(self.log_probs.size)

    def map_index(self) -> int:
        """Maximum a posteriori index; ties go to the lowest index"""
        return int(np.argmax(self.log_probs))

    def cross_entropy(self, s_true: int) -> float:
        """-log p[s_true] in nats"""
        return float(-self.log_probs[s_true])

    def entropy(self) -> float:
        p = self.probs
        return float(-np.sum(p * self.log_probs))

    def normalization_error(self) -> float:
        return float(abs(logsumexp(self.log_probs)))


def kl_divergence(p: Posterior, q: Posterior) -> float:
    """KL(p || q) in nats"""
    probs = p.probs
    return float(np.sum(probs * (p.log_probs - q.log_probs)))


def true_posterior(
    y_q: np.ndarray, H: np.ndarray, noise: NoiseSpec, constellation: Constellation
) -> Posterior:
    """
    Bayes posterior of the query symbol given the realized channel

    log p_i = log rho_i + y^T S^-1 H x_i - 1/2 x_i^T H^T S^-1 H x_i + const.
    The quadratic term is kept so non-constant-modulus sets are exact; for
    constant-modulus sets it is common to all i and cancels.

    Args:
        y_q: Real 2d query observation
        H: Real 2d x 2 channel matrix
        noise: Noise covariance (Sigma_z)
        constellation: Signal set and prior

    Returns:
        Posterior over the S symbol indices
    """
    Hx = np.asarray(H, dtype=float) @ constellation.lifted.T  # (2d, S)
    weighted = noise.sigma_real_inv @ Hx
    scores = (
        constellation.log_priors
        + np.asarray(y_q, dtype=float) @ weighted
        - 0.5 * np.sum(Hx * weighted, axis=0)
    )
    return Posterior.from_log_scores(scores)


def mmse_symbol(
    y_q: np.ndarray, H: np.ndarray, noise: NoiseSpec, constellation: Constellation
) -> np.ndarray:
    """Conditional-mean estimate sum_i x_i p_i of the real 2-vector symbol"""
    posterior = true_posterior(y_q, H, noise, constellation)
    return posterior.probs @ constellation.lifted


def instantaneous_snr(h: np.ndarray, noise: NoiseSpec) -> float:
    """gamma = h_I^T St^-1 h_I + h_Q^T St^-1 h_Q, with St the complex noise covariance"""
    h = np.asarray(h, dtype=complex).ravel()
    factor = linalg.cho_factor(noise.sigma_tilde, lower=True)
    return float(
        h.real @ linalg.cho_solve(factor, h.real) + h.imag @ linalg.cho_solve(factor, h.imag)
    )


def binary_tanh_estimate(y: np.ndarray, h: np.ndarray, sigma_eps: np.ndarray) -> float:
    """
    MMSE estimate tanh(y^T S^-1 h) of x in {+1, -1} for y = h x + eps

    Args:
        y: Real d-vector observation
        h: Real d-vector channel
        sigma_eps: Real d x d noise covariance (positive definite)
    """
    try:
        factor = linalg.cho_factor(np.atleast_2d(sigma_eps), lower=True)
    except linalg.LinAlgError as e:
        raise NumericalError("Binary noise covariance is not positive definite") from e
    y = np.asarray(y, dtype=float).ravel()
    return float(np.tanh(y @ linalg.cho_solve(factor, np.asarray(h, dtype=float).ravel())))
