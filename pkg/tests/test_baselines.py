"""
Context-aware / context-unaware posteriors and channel estimators
"""

import numpy as np
import pytest
from scipy.special import j0, logsumexp

from ice.app.schemas import ScenarioConfig, ScenarioKind
from ice.harness.verification import reference_l0, reference_l1
from ice.processing.baselines import (
    build_stacked_system,
    ca_post,
    ca_post_h_mmse,
    cu_post,
    cu_post_h_lmmse,
    cu_post_h_mmse,
    h_lmmse,
    h_mmse,
    h_mmse_given_theta,
    StackedSystem,
    latent_log_likelihoods,
    point_estimate_posterior,
    scenario1_l0,
    scenario1_l0_all,
    scenario1_l1,
    true_channel_vector,
)
from ice.processing.channel import complex_to_real, qpsk, scenario_constellation, scenario_noise
from ice.processing.oracle import true_posterior
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.utils import gaussian_logpdf


def _complex_product_matrix(x):
    """Real 2x2 matrix of multiplication by the complex symbol x"""
    return np.array([[x.real, -x.imag], [x.imag, x.real]])


def _dense_clarke_estimate(prompt, R, sigma2):
    """
    Textbook LMMSE of the d=1 query channel from the past observations, built
    entry by entry, plus log N(y_past; 0, R_yy)
    """
    k = prompt.k
    symbols = prompt.constellation.points[prompt.s_seq]
    A = [_complex_product_matrix(x) for x in symbols]
    R_yy = np.zeros((2 * k, 2 * k))
    R_hy = np.zeros((2, 2 * k))
    for n in range(k):
        R_hy[:, 2 * n: 2 * n + 2] = R[k, n] * A[n].T
        for m in range(k):
            R_yy[2 * n: 2 * n + 2, 2 * m: 2 * m + 2] = R[n, m] * A[n] @ A[m].T
    R_yy += sigma2 * np.eye(2 * k)
    y = prompt.y_seq.ravel()
    _, log_det = np.linalg.slogdet(R_yy)
    log_evidence = -0.5 * (2 * k * np.log(2 * np.pi) + log_det + y @ np.linalg.inv(R_yy) @ y)
    return R_hy @ np.linalg.inv(R_yy) @ y, log_evidence


def _clarke_matrix(theta, n, constants):
    lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return j0(2 * np.pi * constants.f_carrier * constants.T_s * theta * lags / constants.c)


class TestGaussianLogpdf:
    def test_scalar_standard_normal(self):
        assert gaussian_logpdf(np.zeros(1), np.eye(1)) == pytest.approx(-0.9189385, abs=1e-7)

    def test_isotropic(self):
        assert gaussian_logpdf(np.ones(2), np.eye(2)) == pytest.approx(-(np.log(2 * np.pi) + 1.0), abs=1e-12)

    def test_matches_dense_inverse(self, rng):
        A = rng.standard_normal((6, 6))
        cov = A @ A.T + 6 * np.eye(6)
        v = rng.standard_normal(6)
        _, log_det = np.linalg.slogdet(cov)
        expected = -0.5 * (6 * np.log(2 * np.pi) + log_det + v @ np.linalg.inv(cov) @ v)
        assert gaussian_logpdf(v, cov) == pytest.approx(expected, abs=1e-10)

    def test_semidefinite_recovers_with_jitter(self):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert np.isfinite(gaussian_logpdf(np.array([0.5, 0.5]), cov))

    def test_indefinite_raises(self):
        with pytest.raises(NumericalError, match="condition number"):
            gaussian_logpdf(np.ones(2), np.diag([1.0, -1.0]))


class TestStackedSystem:
    def test_scenario1_vertical_stack(self, scenario1_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario1_config, 3), scenario1_config.kind)
        assert sys.X_past.shape == (12, 4)
        assert sys.X_full(0).shape == (16, 4)
        assert sys.noise_covariance(scenario_noise(scenario1_config), 4).shape == (16, 16)

    def test_scenario2_block_diagonal(self, scenario2_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario2_config, 3), scenario2_config.kind)
        assert sys.X_past.shape == (12, 12)
        assert sys.X_full(1).shape == (16, 16)

    def test_zero_context(self, scenario2_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario2_config, 0), scenario2_config.kind)
        assert sys.k == 0
        assert sys.X_full(2).shape == (4, 4)

    @pytest.mark.parametrize("kind", [ScenarioKind.SCENARIO1, ScenarioKind.SCENARIO2])
    def test_linear_model_at_high_snr(self, kind, make_prompt):
        config = ScenarioConfig(kind=kind, d=2, snr_db=120.0)
        prompt = make_prompt(config, 4, seed=5)
        sys = build_stacked_system(prompt, kind)
        if kind == ScenarioKind.SCENARIO1:
            h = complex_to_real(prompt.realization.h_at(0))
        else:
            h = np.concatenate([complex_to_real(prompt.realization.h_at(n)) for n in range(5)])
        np.testing.assert_allclose(sys.X_full(prompt.s_query_truth) @ h, sys.y_full, atol=1e-4)


class TestLikelihoods:
    def test_l0_matches_fine_trapezoid(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, latent_values=[0.0])
        prompt = make_prompt(config, 2, seed=8)
        sys = build_stacked_system(prompt, config.kind)
        noise = scenario_noise(config)
        for i in range(4):
            estimate = scenario1_l0(sys, i, noise)
            assert estimate.converged
            reference = reference_l0(prompt, i, noise, n_nodes=200_001)
            assert abs(np.expm1(estimate.log_value - reference)) < 1e-6

    @pytest.mark.filterwarnings("error")
    def test_l0_at_high_snr_stays_finite(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, snr_db=60.0, latent_values=[0.0])
        prompt = make_prompt(config, 2, seed=9)
        sys = build_stacked_system(prompt, config.kind)
        noise = scenario_noise(config)
        values, _, converged = scenario1_l0_all(sys, noise)
        assert converged
        assert np.all(np.isfinite(values))
        reference = reference_l0(prompt, prompt.s_query_truth, noise)
        assert abs(np.expm1(values[prompt.s_query_truth] - reference)) < 1e-5

    def test_l0_all_agrees_with_single_candidate(self, scenario1_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario1_config, 3, seed=2), scenario1_config.kind)
        noise = scenario_noise(scenario1_config)
        values, n_nodes, converged = scenario1_l0_all(sys, noise)
        assert converged and n_nodes >= 256
        for i in range(4):
            assert abs(np.expm1(values[i] - scenario1_l0(sys, i, noise).log_value)) < 1e-6

    def test_l0_requires_enough_nodes(self, scenario1_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario1_config, 1), scenario1_config.kind)
        with pytest.raises(ConfigurationError):
            scenario1_l0(sys, 0, scenario_noise(scenario1_config), quad_nodes=32)

    def test_l1_matches_gauss_hermite(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=1, latent_values=[1.0])
        noise = scenario_noise(config)
        for seed in range(5):
            prompt = make_prompt(config, 1, seed=seed)
            sys = build_stacked_system(prompt, config.kind)
            for i in range(4):
                assert abs(np.expm1(scenario1_l1(sys, i, noise) - reference_l1(prompt, i, noise))) < 1e-5

    def test_l1_invariant_to_context_order(self, scenario1_config, make_prompt):
        prompt = make_prompt(scenario1_config, 5, seed=4)
        noise = scenario_noise(scenario1_config)
        sys = build_stacked_system(prompt, scenario1_config.kind)
        order = np.array([3, 0, 4, 1, 2])
        shuffled = StackedSystem(
            kind=scenario1_config.kind,
            d=prompt.d,
            y_past=prompt.y_seq[order].ravel(),
            y_query=prompt.y_query.copy(),
            past_symbols=np.asarray(prompt.s_seq, dtype=int)[order],
            constellation=prompt.constellation,
        )
        for i in range(prompt.constellation.size):
            assert scenario1_l1(shuffled, i, noise) == pytest.approx(scenario1_l1(sys, i, noise), abs=1e-9)

    def test_latent_mixture(self, scenario2_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario2_config, 3), scenario2_config.kind)
        likelihoods = latent_log_likelihoods(sys, scenario2_config, scenario_noise(scenario2_config))
        assert sorted(likelihoods.log_l) == [5.0, 15.0, 30.0]
        stacked = np.stack([likelihoods.log_l[t] for t in (5.0, 15.0, 30.0)])
        np.testing.assert_allclose(likelihoods.mixture(), logsumexp(stacked, axis=0) - np.log(3.0))


class TestPosteriors:
    def test_cu_post_without_context_is_uniform_for_qpsk(self, scenario2_config, make_prompt):
        posterior = cu_post(make_prompt(scenario2_config, 0), scenario2_config, scenario_noise(scenario2_config))
        np.testing.assert_allclose(posterior.probs, 0.25, atol=1e-12)

    @pytest.mark.parametrize("kind,theta", [(ScenarioKind.SCENARIO1, 1.0), (ScenarioKind.SCENARIO2, 15.0)])
    def test_single_latent_value_makes_cu_equal_ca(self, kind, theta, make_prompt):
        config = ScenarioConfig(kind=kind, d=2, latent_values=[theta])
        noise = scenario_noise(config)
        for seed in range(10):
            prompt = make_prompt(config, seed % 5, seed=seed)
            np.testing.assert_allclose(
                cu_post(prompt, config, noise).probs, ca_post(prompt, theta, config, noise).probs, atol=1e-12
            )

    def test_ca_post_at_high_snr(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=2, snr_db=60.0, latent_values=[5.0])
        noise = scenario_noise(config)
        correct = sum(
            ca_post(p, p.theta, config, noise).map_index() == p.s_query_truth
            for p in (make_prompt(config, 4, seed=s) for s in range(40))
        )
        assert correct == 40

    def test_ca_post_rejects_unknown_latent(self, scenario2_config, make_prompt):
        with pytest.raises(ConfigurationError):
            ca_post(make_prompt(scenario2_config, 2), 7.0, scenario2_config, scenario_noise(scenario2_config))

    @pytest.mark.parametrize("estimator", [cu_post_h_mmse, cu_post_h_lmmse])
    def test_point_estimate_posteriors_normalize(self, estimator, scenario1_config, scenario2_config, make_prompt):
        for config in (scenario1_config, scenario2_config):
            posterior = estimator(make_prompt(config, 3), config, scenario_noise(config))
            assert posterior.size == 4
            assert posterior.normalization_error() < 1e-8

    def test_ca_post_h_mmse(self, scenario2_config, make_prompt):
        prompt = make_prompt(scenario2_config, 3)
        posterior = ca_post_h_mmse(prompt, prompt.theta, scenario2_config, scenario_noise(scenario2_config))
        assert posterior.normalization_error() < 1e-8


class TestChannelEstimators:
    def test_no_context_returns_prior_mean(self, scenario2_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario2_config, 0), scenario2_config.kind)
        noise = scenario_noise(scenario2_config)
        for estimate in (h_mmse(sys, scenario2_config, noise), h_lmmse(sys, scenario2_config, noise)):
            assert estimate.from_prior
            np.testing.assert_array_equal(estimate.h, np.zeros(4))

    def test_mixture_weights(self, scenario2_config, make_prompt):
        sys = build_stacked_system(make_prompt(scenario2_config, 4), scenario2_config.kind)
        estimate = h_mmse(sys, scenario2_config, scenario_noise(scenario2_config))
        assert estimate.weights.shape == (3,)
        assert estimate.weights.sum() == pytest.approx(1.0)

    def test_lmmse_equals_mmse_for_one_gaussian_latent(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=2, latent_values=[15.0])
        noise = scenario_noise(config)
        sys = build_stacked_system(make_prompt(config, 5), config.kind)
        np.testing.assert_allclose(
            h_lmmse(sys, config, noise).h, h_mmse_given_theta(sys, 15.0, noise, config).h, atol=1e-12
        )

    def test_rayleigh_estimate_at_high_snr(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, snr_db=60.0, latent_values=[1.0])
        prompt = make_prompt(config, 3, seed=4)
        sys = build_stacked_system(prompt, config.kind)
        estimate = h_mmse_given_theta(sys, 1.0, scenario_noise(config), config)
        np.testing.assert_allclose(estimate.h, true_channel_vector(prompt), atol=1e-2)

    def test_los_posterior_mean_at_high_snr(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, snr_db=30.0, latent_values=[0.0])
        prompt = make_prompt(config, 5, seed=6)
        sys = build_stacked_system(prompt, config.kind)
        estimate = h_mmse_given_theta(sys, 0.0, scenario_noise(config), config)
        np.testing.assert_allclose(estimate.h, true_channel_vector(prompt), atol=0.05)


class TestDenseOracles:
    def test_h_mmse_given_theta_matches_dense_lmmse(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=1, snr_db=5.0, latent_values=[5.0, 30.0])
        prompt = make_prompt(config, 2, seed=12, theta=5.0)
        sys = build_stacked_system(prompt, config.kind)
        R = _clarke_matrix(5.0, 3, config.clarke_constants)
        expected, _ = _dense_clarke_estimate(prompt, R, config.sigma2)
        estimate = h_mmse_given_theta(sys, 5.0, scenario_noise(config), config)
        assert not estimate.from_prior
        np.testing.assert_allclose(estimate.h, expected, atol=1e-12)

    def test_h_mmse_matches_dense_mixture(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=1, snr_db=0.0, latent_values=[5.0, 30.0])
        prompt = make_prompt(config, 2, seed=13)
        sys = build_stacked_system(prompt, config.kind)
        per_theta = [
            _dense_clarke_estimate(prompt, _clarke_matrix(theta, 3, config.clarke_constants), config.sigma2)
            for theta in (5.0, 30.0)
        ]
        log_w = np.log(0.5) + np.array([lw for _, lw in per_theta])
        weights = np.exp(log_w - logsumexp(log_w))
        expected = weights[0] * per_theta[0][0] + weights[1] * per_theta[1][0]

        estimate = h_mmse(sys, config, scenario_noise(config))
        np.testing.assert_allclose(estimate.weights, weights, atol=1e-10)
        np.testing.assert_allclose(estimate.h, expected, atol=1e-10)

    def test_h_lmmse_matches_averaged_toeplitz(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=1, snr_db=0.0, latent_values=[5.0, 15.0, 30.0])
        prompt = make_prompt(config, 3, seed=14)
        sys = build_stacked_system(prompt, config.kind)
        averaged = np.mean([_clarke_matrix(t, 4, config.clarke_constants) for t in (5.0, 15.0, 30.0)], axis=0)
        expected, _ = _dense_clarke_estimate(prompt, averaged, config.sigma2)
        np.testing.assert_allclose(h_lmmse(sys, config, scenario_noise(config)).h, expected, atol=1e-12)


class TestPointEstimatePosterior:
    def test_zero_channel_gives_prior(self, scenario2_config, make_prompt):
        prompt = make_prompt(scenario2_config, 0)
        constellation = scenario_constellation(scenario2_config)
        posterior = point_estimate_posterior(
            prompt.y_query, np.zeros(4), scenario_noise(scenario2_config), constellation
        )
        np.testing.assert_allclose(posterior.probs, constellation.priors, atol=1e-14)

    def test_equals_true_posterior_on_lifted_matrix(self, rng, scenario2_config):
        noise = scenario_noise(scenario2_config)
        constellation = qpsk()
        h_hat = rng.standard_normal(4)
        H = np.column_stack([
            np.concatenate([h_hat[:2], h_hat[2:]]),
            np.concatenate([-h_hat[2:], h_hat[:2]]),
        ])
        y = rng.standard_normal(4)
        np.testing.assert_allclose(
            point_estimate_posterior(y, h_hat, noise, constellation).log_probs,
            true_posterior(y, H, noise, constellation).log_probs,
            atol=1e-14,
        )

    def test_map_is_transmitted_symbol_at_high_snr(self, make_prompt):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, snr_db=40.0, latent_values=[1.0])
        prompt = make_prompt(config, 0, seed=3)
        posterior = point_estimate_posterior(
            prompt.y_query, true_channel_vector(prompt), scenario_noise(config), prompt.constellation
        )
        assert posterior.map_index() == prompt.s_query_truth
