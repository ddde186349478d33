"""
Context-aware and context-unaware Bayesian posterior baselines

Each prompt is rewritten as a stacked linear system y_full = X_full(i) h + z
over all time indices; the symbol posterior then only needs the likelihood
of y_full under each candidate query symbol i and each latent value theta.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, NamedTuple, Optional, Tuple
import logging

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from ice.app.schemas import ClarkeConstants, ScenarioConfig, ScenarioKind
from ice.processing.channel import (
    Constellation,
    NoiseSpec,
    Prompt,
    channel_correlation,
    clarke_correlation_matrix,
    complex_to_real,
    embed_symbol_matrix,
    lift_complex_vector,
    los_channel,
    real_to_complex,
)
from ice.processing.exceptions import ConfigurationError
from ice.processing.oracle import Posterior, true_posterior
from ice.processing.utils import LOG_2PI, cholesky_lower, cholesky_solve, gaussian_logpdf

logger = logging.getLogger(__name__)

QUAD_START_NODES = 256
QUAD_MAX_NODES = 2 ** 16
QUAD_RTOL = 1e-6
QUAD_CHUNK = 8192


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """
    Stacked real system of a prompt

    Scenario 1 stacks M^d(x_{s_n}) vertically (one shared channel); Scenario 2
    places them block-diagonally (one channel per time index). Vectors are
    time-major blocks of size 2d.
    """
    kind: ScenarioKind
    d: int
    y_past: np.ndarray
    y_query: np.ndarray
    past_symbols: np.ndarray
    constellation: Constellation
    X_past: np.ndarray = field(init=False)

    def __post_init__(self):
        blocks = [embed_symbol_matrix(x, self.d) for x in self.constellation.lifted[self.past_symbols]]
        two_d = 2 * self.d
        if self.kind == ScenarioKind.SCENARIO1:
            X_past = np.vstack(blocks) if blocks else np.zeros((0, two_d))
        else:
            X_past = linalg.block_diag(*blocks) if blocks else np.zeros((0, 0))
        object.__setattr__(self, "X_past", X_past)

    @property
    def k(self) -> int:
        return int(self.past_symbols.size)

    @property
    def y_full(self) -> np.ndarray:
        return np.concatenate([self.y_past, self.y_query])

    def query_block(self, i: int) -> np.ndarray:
        return embed_symbol_matrix(self.constellation.lifted[i], self.d)

    def X_full(self, i: int) -> np.ndarray:
        """X_past extended by candidate query symbol i"""
        block = self.query_block(i)
        if self.kind == ScenarioKind.SCENARIO1:
            return np.vstack([self.X_past, block])
        if self.k == 0:
            return block
        return linalg.block_diag(self.X_past, block)

    def noise_covariance(self, noise: NoiseSpec, n_blocks: int) -> np.ndarray:
        """I_{n_blocks} kron Sigma_z (sigma^2 I in the isotropic case)"""
        return np.kron(np.eye(n_blocks), noise.sigma_real)


def build_stacked_system(prompt: Prompt, kind: ScenarioKind) -> StackedSystem:
    """Stack the context and query of a prompt"""
    return StackedSystem(
        kind=kind,
        d=prompt.d,
        y_past=prompt.y_seq.ravel(),
        y_query=prompt.y_query.copy(),
        past_symbols=np.asarray(prompt.s_seq, dtype=int),
        constellation=prompt.constellation,
    )


@dataclass(frozen=True)
class LatentLikelihoods:
    """log l_theta(i) for every latent value and candidate, with the latent prior"""
    log_l: Dict[float, np.ndarray]
    latent_log_prior: Dict[float, float]
    quadrature_converged: bool = True

    def mixture(self) -> np.ndarray:
        """log sum_theta f(theta) l_theta(i) per candidate"""
        stacked = np.stack([self.latent_log_prior[t] + self.log_l[t] for t in self.log_l])
        return logsumexp(stacked, axis=0)


class QuadratureEstimate(NamedTuple):
    log_value: float
    n_nodes: int
    converged: bool


class ChannelEstimate(NamedTuple):
    h: np.ndarray  # real [Re h; Im h] at the query index
    from_prior: bool  # k = 0: prior mean returned
    weights: Optional[np.ndarray] = None  # posterior over latent values (mixtures only)


def _trapezoid_log_weights(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes on [0, pi] and log trapezoid weights including the 1/pi density"""
    alphas = np.linspace(0.0, np.pi, n)
    log_w = np.full(n, np.log(np.pi / (n - 1)) - np.log(np.pi))
    log_w[[0, -1]] += np.log(0.5)
    return alphas, log_w


def _adaptive_aoa_quadrature(
    log_integrand: Callable[[np.ndarray], np.ndarray],
    start_nodes: int = QUAD_START_NODES,
    max_nodes: int = QUAD_MAX_NODES,
    rtol: float = QUAD_RTOL,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """
    log of int_0^pi (1/pi) g_c(alpha) d alpha for each column c of log g

    The alpha -> g(cos alpha) integrands extend to smooth even periodic
    functions, so the trapezoid rule converges quickly; nodes are doubled until
    successive estimates agree to `rtol` (relative) or `max_nodes` is reached.

    Returns:
        (log integrals, nodes, log of normalized node weights per column, converged)
    """
    n = max(int(start_nodes), 2)
    alphas, log_w = _trapezoid_log_weights(n)
    terms = log_integrand(alphas) + log_w[:, None]
    current = logsumexp(terms, axis=0)

    while True:
        if 2 * n > max_nodes:
            logger.warning(f"AoA quadrature hit the {max_nodes}-node cap without converging")
            return current, alphas, terms - current, False
        n *= 2
        alphas, log_w = _trapezoid_log_weights(n)
        terms = log_integrand(alphas) + log_w[:, None]
        refined = logsumexp(terms, axis=0)
        if np.all(np.abs(refined - current) < np.log1p(rtol)):
            return refined, alphas, terms - refined, True
        current = refined


def _los_log_density(
    sys: StackedSystem, noise: NoiseSpec, alphas: np.ndarray, candidates: Optional[np.ndarray]
) -> np.ndarray:
    """
    Log-density of the observations given the LoS channel at each alpha

    Column 0 holds the past-only term; with candidates, column c holds past
    plus query term for candidate c.
    """
    d = sys.d
    points = sys.constellation.points
    y_past = sys.y_past.reshape(sys.k, 2 * d)
    inv = noise.sigma_real_inv
    log_norm = -0.5 * (2 * d * LOG_2PI + 2.0 * np.sum(np.log(np.diag(noise.chol_real))))
    n_cols = 1 if candidates is None else len(candidates)

    out = np.empty((alphas.size, n_cols))
    for start in range(0, alphas.size, QUAD_CHUNK):
        h = los_channel(alphas[start:start + QUAD_CHUNK], d)  # (m, d)
        past = np.zeros(h.shape[0])
        for n in range(sys.k):
            mean = points[sys.past_symbols[n]] * h
            r = y_past[n] - np.concatenate([mean.real, mean.imag], axis=1)
            past += log_norm - 0.5 * np.einsum("ma,ab,mb->m", r, inv, r)
        if candidates is None:
            out[start:start + h.shape[0], 0] = past
            continue
        for c, i in enumerate(candidates):
            mean = points[i] * h
            r = sys.y_query - np.concatenate([mean.real, mean.imag], axis=1)
            out[start:start + h.shape[0], c] = past + log_norm - 0.5 * np.einsum("ma,ab,mb->m", r, inv, r)
    return out


def scenario1_l0_all(
    sys: StackedSystem, noise: NoiseSpec, quad_nodes: int = QUAD_START_NODES
) -> Tuple[np.ndarray, int, bool]:
    """log l_0(i) for every candidate i, with node count and convergence flag"""
    if quad_nodes < 64:
        raise ConfigurationError(f"At least 64 quadrature nodes are required, got {quad_nodes}")
    candidates = np.arange(sys.constellation.size)
    values, alphas, _, converged = _adaptive_aoa_quadrature(
        lambda a: _los_log_density(sys, noise, a, candidates), quad_nodes
    )
    return values, alphas.size, converged


def scenario1_l0(
    sys: StackedSystem, i: int, noise: NoiseSpec, quad_nodes: int = QUAD_START_NODES
) -> QuadratureEstimate:
    """
    log l_0(i): LoS likelihood marginalized over the angle of arrival

    The one-dimensional integral over alpha ~ U((0, pi]) is evaluated by the
    trapezoid rule in the log domain with node doubling.
    """
    if quad_nodes < 64:
        raise ConfigurationError(f"At least 64 quadrature nodes are required, got {quad_nodes}")
    values, alphas, _, converged = _adaptive_aoa_quadrature(
        lambda a: _los_log_density(sys, noise, a, np.array([i])), quad_nodes
    )
    return QuadratureEstimate(float(values[0]), alphas.size, converged)


def scenario1_l1(sys: StackedSystem, i: int, noise: NoiseSpec) -> float:
    """log l_1(i): y_full ~ N(0, 1/2 X_full X_full^T + Sigma_full) under Rayleigh fading"""
    X = sys.X_full(i)
    C = 0.5 * X @ X.T + sys.noise_covariance(noise, sys.k + 1)
    return gaussian_logpdf(sys.y_full, C, f"scenario1 theta=1, k={sys.k}")


def time_correlation_loglik(
    sys: StackedSystem, i: int, R_time: np.ndarray, noise: NoiseSpec, context: Optional[str] = None
) -> float:
    """log N(y_full; 0, X_full (R_time kron I_2d) X_full^T + Sigma_full) for Scenario 2 stacking"""
    X = sys.X_full(i)
    C = X @ np.kron(R_time, np.eye(2 * sys.d)) @ X.T + sys.noise_covariance(noise, sys.k + 1)
    return gaussian_logpdf(sys.y_full, C, context)


def scenario2_ltheta(
    sys: StackedSystem,
    i: int,
    theta: float,
    noise: NoiseSpec,
    constants: ClarkeConstants,
    half_power: bool = False,
) -> float:
    """log l_theta(i) under Clarke's model with velocity theta"""
    R = clarke_correlation_matrix(theta, sys.k + 1, constants)
    if half_power:
        R = 0.5 * R
    return time_correlation_loglik(sys, i, R, noise, f"theta={theta}, k={sys.k}")


def _log_likelihoods_given_theta(
    sys: StackedSystem, theta: float, config: ScenarioConfig, noise: NoiseSpec
) -> Tuple[np.ndarray, bool]:
    S = sys.constellation.size
    if config.kind == ScenarioKind.SCENARIO1:
        if theta == 0:
            values, _, converged = scenario1_l0_all(sys, noise)
            return values, converged
        return np.array([scenario1_l1(sys, i, noise) for i in range(S)]), True
    values = [
        scenario2_ltheta(sys, i, theta, noise, config.clarke_constants, config.half_power_scenario2)
        for i in range(S)
    ]
    return np.array(values), True


def latent_log_likelihoods(
    sys: StackedSystem, config: ScenarioConfig, noise: NoiseSpec
) -> LatentLikelihoods:
    """log l_theta(i) for every latent value of the scenario"""
    with np.errstate(divide="ignore"):
        log_prior = np.log(config.latent_probabilities())

    log_l, converged = {}, True
    for theta in config.latent_values:
        values, ok = _log_likelihoods_given_theta(sys, theta, config, noise)
        log_l[theta] = values
        converged = converged and ok
    return LatentLikelihoods(log_l, dict(zip(config.latent_values, log_prior.tolist())), converged)


def _check_latent(theta: float, config: ScenarioConfig) -> None:
    if theta not in config.latent_values:
        raise ConfigurationError(f"Latent value {theta} is not in {config.latent_values}")


def ca_post(prompt: Prompt, theta_true: float, config: ScenarioConfig, noise: NoiseSpec) -> Posterior:
    """Context-aware posterior: rho_i l_theta(i) with theta known"""
    _check_latent(theta_true, config)
    sys = build_stacked_system(prompt, config.kind)
    log_l, _ = _log_likelihoods_given_theta(sys, theta_true, config, noise)
    return Posterior.from_log_scores(prompt.constellation.log_priors + log_l)


def cu_post(prompt: Prompt, config: ScenarioConfig, noise: NoiseSpec) -> Posterior:
    """Context-unaware posterior: rho_i sum_theta f(theta) l_theta(i)"""
    sys = build_stacked_system(prompt, config.kind)
    likelihoods = latent_log_likelihoods(sys, config, noise)
    return Posterior.from_log_scores(prompt.constellation.log_priors + likelihoods.mixture())


def linear_channel_estimate(
    sys: StackedSystem, correlation: np.ndarray, noise: NoiseSpec, context: str
) -> Tuple[np.ndarray, float]:
    """
    Linear MMSE of the query-index channel from y_past, plus log N(y_past; 0, R_yy)

    `correlation` is E[h h^T] (2d x 2d) for Scenario 1 and the (k+1) x (k+1)
    time correlation for Scenario 2.
    """
    k, two_d = sys.k, 2 * sys.d
    if sys.kind == ScenarioKind.SCENARIO1:
        R_hh_past = correlation
        R_h_past = correlation
    else:
        R_hh_past = np.kron(correlation[:k, :k], np.eye(two_d))
        R_h_past = np.kron(correlation[k, :k][None, :], np.eye(two_d))

    R_hy = R_h_past @ sys.X_past.T
    R_yy = sys.X_past @ R_hh_past @ sys.X_past.T + sys.noise_covariance(noise, k)
    L = cholesky_lower(R_yy, context)
    h = R_hy @ cholesky_solve(L, sys.y_past)

    alpha = linalg.solve_triangular(L, sys.y_past, lower=True)
    log_evidence = -0.5 * (R_yy.shape[0] * LOG_2PI + 2.0 * np.sum(np.log(np.diag(L))) + alpha @ alpha)
    return h, float(log_evidence)


def _los_posterior_mean(sys: StackedSystem, noise: NoiseSpec) -> Tuple[np.ndarray, float]:
    """E[h | y_past, theta=0] by AoA quadrature, plus the log marginal of y_past"""
    values, alphas, log_weights, _ = _adaptive_aoa_quadrature(
        lambda a: _los_log_density(sys, noise, a, None)
    )
    weights = np.exp(log_weights[:, 0])
    h = los_channel(alphas, sys.d)
    mean = np.concatenate([weights @ h.real, weights @ h.imag])
    return mean, float(values[0])


def _estimate_given_theta(
    sys: StackedSystem, theta: float, config: ScenarioConfig, noise: NoiseSpec
) -> Tuple[np.ndarray, float]:
    if config.kind == ScenarioKind.SCENARIO1 and theta == 0:
        return _los_posterior_mean(sys, noise)
    correlation = channel_correlation(config, theta, sys.k + 1)
    return linear_channel_estimate(sys, correlation, noise, f"theta={theta}, k={sys.k}")


def h_mmse_given_theta(
    sys: StackedSystem, theta: float, noise: NoiseSpec, config: ScenarioConfig
) -> ChannelEstimate:
    """
    MMSE estimate of the query-index channel given theta

    Gaussian channels (Rayleigh, Clarke) use R_hy R_yy^-1 y_past; the LoS
    channel uses the exact posterior mean over the angle of arrival.
    """
    _check_latent(theta, config)
    if sys.k == 0:
        return ChannelEstimate(np.zeros(2 * sys.d), True)
    h, _ = _estimate_given_theta(sys, theta, config, noise)
    return ChannelEstimate(h, False)


def h_mmse(sys: StackedSystem, config: ScenarioConfig, noise: NoiseSpec) -> ChannelEstimate:
    """Posterior-over-theta mixture of the per-theta MMSE estimates"""
    if sys.k == 0:
        return ChannelEstimate(np.zeros(2 * sys.d), True)

    with np.errstate(divide="ignore"):
        log_prior = np.log(config.latent_probabilities())
    estimates, log_w = [], []
    for theta, lp in zip(config.latent_values, log_prior):
        h, log_evidence = _estimate_given_theta(sys, theta, config, noise)
        estimates.append(h)
        log_w.append(lp + log_evidence)

    log_w = np.asarray(log_w)
    weights = np.exp(log_w - logsumexp(log_w))
    return ChannelEstimate(weights @ np.asarray(estimates), False, weights)


def h_lmmse(sys: StackedSystem, config: ScenarioConfig, noise: NoiseSpec) -> ChannelEstimate:
    """LMMSE using the latent-averaged correlation E_theta[R_theta]"""
    if sys.k == 0:
        return ChannelEstimate(np.zeros(2 * sys.d), True)

    probs = config.latent_probabilities()
    averaged = sum(
        p * channel_correlation(config, theta, sys.k + 1)
        for theta, p in zip(config.latent_values, probs)
    )
    h, _ = linear_channel_estimate(sys, averaged, noise, f"averaged correlation, k={sys.k}")
    return ChannelEstimate(h, False)


def point_estimate_posterior(
    y_q: np.ndarray, h_hat: np.ndarray, noise: NoiseSpec, constellation: Constellation
) -> Posterior:
    """True posterior evaluated at a channel point estimate [Re h; Im h]"""
    H = lift_complex_vector(real_to_complex(h_hat))
    return true_posterior(y_q, H, noise, constellation)


def cu_post_h_mmse(prompt: Prompt, config: ScenarioConfig, noise: NoiseSpec) -> Posterior:
    sys = build_stacked_system(prompt, config.kind)
    estimate = h_mmse(sys, config, noise)
    return point_estimate_posterior(prompt.y_query, estimate.h, noise, prompt.constellation)


def cu_post_h_lmmse(prompt: Prompt, config: ScenarioConfig, noise: NoiseSpec) -> Posterior:
    sys = build_stacked_system(prompt, config.kind)
    estimate = h_lmmse(sys, config, noise)
    return point_estimate_posterior(prompt.y_query, estimate.h, noise, prompt.constellation)


def ca_post_h_mmse(prompt: Prompt, theta_true: float, config: ScenarioConfig, noise: NoiseSpec) -> Posterior:
    """Point-estimate posterior from the context-aware channel estimate h^{MMSE, theta}"""
    sys = build_stacked_system(prompt, config.kind)
    estimate = h_mmse_given_theta(sys, theta_true, noise, config)
    return point_estimate_posterior(prompt.y_query, estimate.h, noise, prompt.constellation)


def true_channel_vector(prompt: Prompt) -> np.ndarray:
    """Real [Re h; Im h] of the realized channel at the query index"""
    return complex_to_real(prompt.realization.h_at(prompt.k))
