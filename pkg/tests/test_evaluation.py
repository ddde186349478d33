"""
Estimator registry, evaluation curves and the CSV contract
"""

import numpy as np
import pytest

from ice.app.schemas import ScenarioConfig, ScenarioKind
from ice.harness import evaluation
from ice.harness.evaluation import (
    CSV_HEADER,
    ESTIMATORS,
    evaluate_curve,
    format_eval_csv,
    map_accuracy,
    parse_estimators,
)
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.oracle import Posterior
from ice.processing.sat import AttentionWeights


class TestRegistry:
    def test_parse(self):
        assert parse_estimators("ca-post, sat") == ["ca-post", "sat"]
        assert set(evaluation.DEFAULT_ESTIMATORS) <= set(ESTIMATORS)

    @pytest.mark.parametrize("names", ["ca-post,bogus", "", "sat,sat"])
    def test_rejects_bad_lists(self, names):
        with pytest.raises(ConfigurationError):
            parse_estimators(names)


class TestMapAccuracy:
    def test_argmax(self):
        assert map_accuracy(Posterior.from_probs(np.array([0.1, 0.6, 0.2, 0.1])), 1)
        assert not map_accuracy(Posterior.from_probs(np.array([0.1, 0.6, 0.2, 0.1])), 2)

    def test_tie_breaks_to_lowest_index(self):
        assert map_accuracy(Posterior.from_probs(np.full(4, 0.25)), 0)


class TestEvaluateCurve:
    def test_uniform_guessing(self, scenario2_config):
        result, = evaluate_curve(scenario2_config, "uniform", k_max=2, n_trials=400, seed=1)
        for point in result.points:
            assert point.ce_mean == pytest.approx(np.log(4.0))
            assert point.ce_ci90 == pytest.approx(0.0, abs=1e-12)
            assert 15.0 <= point.acc_pct <= 35.0
            assert point.trials == 400

    def test_sat_is_absent_without_context(self, scenario2_config):
        result, = evaluate_curve(scenario2_config, ["sat"], k_max=2, n_trials=5, seed=1)
        empty = result.point(0)
        assert (empty.ce_mean, empty.ce_ci90, empty.acc_pct, empty.trials) == (None, None, None, 0)
        assert result.point(1).trials == 5

    def test_identical_across_worker_counts(self, scenario1_config):
        names = "ca-post,cu-post,sat,cu-post-h-lmmse"
        serial = evaluate_curve(scenario1_config, names, k_max=3, n_trials=12, seed=5, workers=1)
        threaded = evaluate_curve(scenario1_config, names, k_max=3, n_trials=12, seed=5, workers=4)
        assert format_eval_csv(serial) == format_eval_csv(threaded)

    def test_independent_prompts(self, scenario2_config):
        prefix = evaluate_curve(scenario2_config, "true-posterior", k_max=3, n_trials=20, seed=2)
        fresh = evaluate_curve(scenario2_config, "true-posterior", k_max=3, n_trials=20, seed=2, independent=True)
        assert prefix[0].point(3).trials == fresh[0].point(3).trials == 20
        assert format_eval_csv(prefix) != format_eval_csv(fresh)

    def test_ca_post_at_high_snr(self):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=2, snr_db=60.0, latent_values=[5.0])
        result, = evaluate_curve(config, "ca-post", k_max=6, n_trials=30, seed=3)
        for k in (4, 5, 6):
            assert result.point(k).acc_pct >= 99.0

    def test_context_aware_beats_context_unaware(self, scenario2_config):
        ca, cu = evaluate_curve(scenario2_config, "ca-post,cu-post", k_max=8, n_trials=150, seed=4)
        for k in (4, 8):
            se = max(ca.point(k).ce_ci90, cu.point(k).ce_ci90) / evaluation.CI90_Z
            assert ca.point(k).ce_mean <= cu.point(k).ce_mean + 3.0 * se

    @pytest.mark.slow
    def test_scenario2_curve_shape(self):
        config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, snr_db=0.0, seed=0)
        ca, cu, lmmse = evaluate_curve(config, "ca-post,cu-post,cu-post-h-lmmse", k_max=10, n_trials=2000, seed=0)

        def gap(k):
            return cu.point(k).ce_mean - ca.point(k).ce_mean

        assert gap(10) < 0.5 * gap(1)
        for k in range(2, 11):
            se = np.hypot(lmmse.point(k).ce_ci90, cu.point(k).ce_ci90) / evaluation.CI90_Z
            assert lmmse.point(k).ce_mean - cu.point(k).ce_mean > 3.0 * se

    def test_custom_weights(self, scenario2_config):
        zero, = evaluate_curve(
            scenario2_config, "sat-limit", k_max=0, n_trials=10, seed=1, weights=AttentionWeights.zeros(2)
        )
        assert zero.point(0).ce_mean == pytest.approx(np.log(4.0))
        with pytest.raises(ConfigurationError):
            evaluate_curve(scenario2_config, "sat", k_max=1, n_trials=2, weights=AttentionWeights.zeros(3))

    def test_unnormalized_posterior_is_a_numerical_error(self, scenario2_config, monkeypatch):
        monkeypatch.setitem(ESTIMATORS, "broken", lambda p, ctx: Posterior(np.log(np.full(4, 0.5))))
        with pytest.raises(NumericalError):
            evaluate_curve(scenario2_config, "broken", k_max=0, n_trials=2)

    def test_argument_checks(self, scenario2_config):
        with pytest.raises(ConfigurationError):
            evaluate_curve(scenario2_config, "uniform", k_max=-1, n_trials=2)
        with pytest.raises(ConfigurationError):
            evaluate_curve(scenario2_config, "uniform", k_max=1, n_trials=0)


class TestCsv:
    def test_header_and_rows(self, scenario2_config):
        results = evaluate_curve(scenario2_config, "ca-post,sat", k_max=0, n_trials=10, seed=0)
        lines = format_eval_csv(results).splitlines()
        assert lines[0].startswith("#") and "nats" in lines[0]
        assert lines[1] == "estimator,k,ce_mean,ce_ci90,acc_pct,trials"
        assert lines[1].split(",") == CSV_HEADER
        assert len(lines) == 4
        assert lines[2].startswith("ca-post,0,") and lines[2].endswith(",10")
        assert lines[3] == "sat,0,,,,0"
