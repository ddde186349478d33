"""
Shared fixtures: small scenarios, noise and prompt factories
"""

import numpy as np
import pytest

from ice.app import config as app_config
from ice.app.schemas import ScenarioConfig, ScenarioKind
from ice.processing.channel import qpsk, sample_prompt, scenario_constellation, scenario_noise
from ice.processing.utils import trial_rng


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    """Each test reads settings from a clean environment in its own directory"""
    for name in ("APP_NAME", "LOG_LEVEL", "LOG_JSON", "ICE_THREADS", "DEFAULT_SEED", "N_STAT", "OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)
    app_config.reset_settings()
    yield
    app_config.reset_settings()


@pytest.fixture
def rng():
    return trial_rng(1234)


@pytest.fixture
def qpsk_set():
    return qpsk()


@pytest.fixture
def scenario1_config():
    return ScenarioConfig(kind=ScenarioKind.SCENARIO1, d=2, snr_db=0.0, seed=11)


@pytest.fixture
def scenario2_config():
    return ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=2, snr_db=0.0, seed=22)


@pytest.fixture
def make_prompt():
    """Prompt factory: make_prompt(config, k, seed, theta=None)"""
    def _make(config, k, seed=0, theta=None):
        return sample_prompt(
            config, k, scenario_constellation(config), scenario_noise(config), trial_rng(seed), theta
        )
    return _make


@pytest.fixture
def random_channel():
    def _draw(rng, d):
        return (rng.standard_normal(d) + 1j * rng.standard_normal(d)) * np.sqrt(0.5)
    return _draw
