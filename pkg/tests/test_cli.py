"""
Command-line surface: subcommands, output files and exit codes
"""

import json

import numpy as np
import pytest

from ice.app import main as cli
from ice.harness import verification
from ice.harness.datasets import load_dataset
from ice.harness.verification import CheckResult
from ice.processing.exceptions import NumericalError
from ice.processing.sat import AttentionWeights


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"kind": "scenario2", "d": 2, "snr_db": 0.0, "seed": 3}))
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestEvaluate:
    def test_single_estimator_at_k0(self, tmp_path, scenario_file):
        out = tmp_path / "out"
        assert run("evaluate", "--config", scenario_file, "--estimators", "ca-post",
                   "--kmax", 0, "--trials", 10, "--out", out) == 0
        lines = (out / "eval.csv").read_text().splitlines()
        assert lines[1] == "estimator,k,ce_mean,ce_ci90,acc_pct,trials"
        assert len(lines) == 3
        assert json.loads((out / "eval.json").read_text())[0]["estimator"] == "ca-post"

    def test_byte_identical_across_runs_and_threads(self, tmp_path, scenario_file, monkeypatch):
        args = ["evaluate", "--config", scenario_file, "--estimators", "ca-post,sat,cu-post-h-mmse",
                "--kmax", 3, "--trials", 8, "--seed", 11]
        assert run(*args, "--out", tmp_path / "a") == 0
        monkeypatch.setenv("ICE_THREADS", "3")
        assert run(*args, "--out", tmp_path / "b") == 0
        assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()

    def test_trained_weights(self, tmp_path, scenario_file):
        AttentionWeights.zeros(2).save(tmp_path / "w.json", S=4)
        assert run("evaluate", "--config", scenario_file, "--estimators", "sat-limit", "--kmax", 0,
                   "--trials", 5, "--weights", tmp_path / "w.json", "--out", tmp_path) == 0
        row = (tmp_path / "eval.csv").read_text().splitlines()[2].split(",")
        assert float(row[2]) == pytest.approx(np.log(4.0))

    def test_unknown_estimator_is_a_usage_error(self, tmp_path, scenario_file):
        assert run("evaluate", "--config", scenario_file, "--estimators", "magic", "--out", tmp_path) == 2

    def test_malformed_config_is_a_usage_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"kind": "scenario1", "latent_values": [3]}')
        assert run("evaluate", "--config", bad, "--out", tmp_path) == 2

    def test_numerical_failure_exit_code(self, tmp_path, scenario_file, monkeypatch):
        def explode(*args, **kwargs):
            raise NumericalError("Matrix is not positive definite after jitter")

        monkeypatch.setattr(cli, "evaluate_curve", explode)
        assert run("evaluate", "--config", scenario_file, "--out", tmp_path) == 1


class TestOtherCommands:
    def test_usage_error(self):
        assert run() == 2
        assert run("dance") == 2

    def test_simulate(self, tmp_path, scenario_file):
        assert run("simulate", "--config", scenario_file, "--kmax", 4, "--trials", 6, "--out", tmp_path) == 0
        data = load_dataset(tmp_path / "prompts.npz")
        assert data["y"].shape == (6, 5, 4)
        assert data["s"].shape == (6, 5)
        assert data["theta"].shape == (6,)
        assert data["h_query"].shape == (6, 4)
        assert json.loads((tmp_path / "scenario.json").read_text())["seed"] == 3

    def test_train_sat(self, tmp_path, scenario_file):
        train_config = tmp_path / "train.json"
        train_config.write_text(json.dumps({"context_len": 10, "batch_size": 8, "eval_prompts": 16}))
        assert run("train-sat", "--config", scenario_file, "--train-config", train_config,
                   "--epochs", 3, "--out", tmp_path) == 0
        weights = AttentionWeights.load(tmp_path / "weights.json")
        assert weights.W.shape == (4, 4)
        assert len((tmp_path / "trace.csv").read_text().splitlines()) == 4

    def test_verify_exit_codes(self, monkeypatch, capsys):
        monkeypatch.setattr(verification, "CHECKS", [lambda seed, full: CheckResult("ok", True, f"seed {seed}")])
        assert run("verify", "--seed", 7) == 0
        assert "PASS ok: seed 7" in capsys.readouterr().out

        monkeypatch.setattr(verification, "CHECKS", [lambda seed, full: CheckResult("bad", False, "x")])
        assert run("verify") == 1

    def test_verify_uses_fixed_scenarios(self, capsys):
        assert run("verify", "--snr-db", 0) == 2
        capsys.readouterr()
        assert run("verify", "--help") == 0
        help_text = " ".join(capsys.readouterr().out.split())
        assert "fixed scenarios" in help_text
        assert "do not apply" in help_text

    @pytest.mark.slow
    def test_verify_is_byte_identical(self, capsys):
        assert run("verify", "--seed", 7) == 0
        first = capsys.readouterr().out
        assert run("verify", "--seed", 7) == 0
        assert capsys.readouterr().out == first
