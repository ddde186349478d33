"""
Oracle estimators that see the realized channel
"""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from ice.processing.channel import Constellation, NoiseSpec, bpsk, lift_complex_vector, qam16, qpsk
from ice.processing.exceptions import NumericalError
from ice.processing.oracle import (
    Posterior,
    binary_tanh_estimate,
    instantaneous_snr,
    kl_divergence,
    mmse_symbol,
    true_posterior,
)
from ice.processing.utils import LOG_FLOOR, trial_rng


class TestPosterior:
    def test_normalizes_scores(self):
        p = Posterior.from_log_scores(np.array([1.0, 2.0, 3.0]))
        assert p.probs.sum() == pytest.approx(1.0)
        assert p.normalization_error() < 1e-12
        assert p.map_index() == 2

    def test_rejects_nan_and_empty_mass(self):
        with pytest.raises(NumericalError):
            Posterior.from_log_scores(np.array([0.0, np.nan]))
        with pytest.raises(NumericalError):
            Posterior.from_log_scores(np.array([-np.inf, -np.inf]))

    def test_ties_go_to_lowest_index(self):
        assert Posterior.from_probs(np.full(4, 0.25)).map_index() == 0

    def test_floored_cross_entropy(self):
        p = Posterior.from_probs(np.array([1.0, 0.0, 0.0, 0.0]))
        assert np.all(np.isfinite(p.log_probs))
        assert p.cross_entropy(1) == pytest.approx(-LOG_FLOOR)
        assert p.cross_entropy(0) == pytest.approx(0.0)

    def test_entropy_and_kl(self):
        uniform = Posterior.from_probs(np.full(4, 0.25))
        skewed = Posterior.from_probs(np.array([0.7, 0.1, 0.1, 0.1]))
        assert uniform.entropy() == pytest.approx(np.log(4))
        assert kl_divergence(uniform, uniform) == pytest.approx(0.0, abs=1e-15)
        assert kl_divergence(skewed, uniform) > 0.0


class TestTruePosterior:
    def test_matches_gaussian_densities_for_qam16(self, rng, random_channel):
        constellation = qam16()
        noise = NoiseSpec(np.array([[1.0, 0.3], [0.3, 0.8]]))
        for _ in range(20):
            H = lift_complex_vector(random_channel(rng, 2))
            y = H @ constellation.lifted[rng.integers(16)] + noise.sample(rng, 1)[0]
            densities = np.array([
                multivariate_normal(mean=H @ x, cov=noise.sigma_real).pdf(y) for x in constellation.lifted
            ])
            np.testing.assert_allclose(
                true_posterior(y, H, noise, constellation).probs, densities / densities.sum(), atol=1e-10
            )

    def test_uses_symbol_prior(self):
        constellation = Constellation(qpsk().points, np.array([0.7, 0.1, 0.1, 0.1]))
        noise = NoiseSpec.isotropic_noise(1.0, 1)
        H = lift_complex_vector(np.array([0.0j]))
        np.testing.assert_allclose(true_posterior(np.zeros(2), H, noise, constellation).probs, constellation.priors)

    def test_high_snr_recovers_symbol(self, random_channel):
        constellation = qpsk()
        noise = NoiseSpec.isotropic_noise(1e-6, 2)
        for t in range(100):
            rng = trial_rng(3, t)
            H = lift_complex_vector(random_channel(rng, 2))
            s = int(rng.integers(4))
            y = H @ constellation.lifted[s] + noise.sample(rng, 1)[0]
            assert true_posterior(y, H, noise, constellation).map_index() == s

    def test_mmse_symbol_at_high_snr(self, rng, random_channel):
        constellation = qpsk()
        noise = NoiseSpec.isotropic_noise(1e-6, 2)
        H = lift_complex_vector(random_channel(rng, 2))
        y = H @ constellation.lifted[2]
        np.testing.assert_allclose(mmse_symbol(y, H, noise, constellation), constellation.lifted[2], atol=1e-6)


class TestScalarHelpers:
    def test_instantaneous_snr(self, rng, random_channel):
        noise = NoiseSpec(np.array([[1.5, 0.2], [0.2, 0.7]]))
        h = random_channel(rng, 2)
        H = lift_complex_vector(h)
        gamma = instantaneous_snr(h, noise)
        np.testing.assert_allclose(0.5 * H.T @ noise.sigma_real_inv @ H, gamma * np.eye(2), atol=1e-12)

    def test_binary_tanh_matches_true_posterior(self, random_channel):
        constellation = bpsk()
        for t in range(200):
            rng = trial_rng(4, t)
            noise = NoiseSpec.isotropic_noise(float(rng.uniform(0.2, 2.0)), 2)
            H = lift_complex_vector(random_channel(rng, 2))
            y = H @ constellation.lifted[int(rng.integers(2))] + noise.sample(rng, 1)[0]
            p = true_posterior(y, H, noise, constellation).probs
            assert p[0] - p[1] == pytest.approx(binary_tanh_estimate(y, H[:, 0], noise.sigma_real), abs=1e-12)

    def test_binary_tanh_rejects_singular_noise(self):
        with pytest.raises(NumericalError):
            binary_tanh_estimate(np.ones(2), np.ones(2), np.zeros((2, 2)))
