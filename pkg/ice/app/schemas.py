"""
Pydantic documents for scenarios, training runs, trained weights and
evaluation results
"""

from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Union
import json
import logging

import numpy as np
import yaml
from pydantic import BaseModel, Field, field_validator, model_validator

from ice.processing.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class ScenarioKind(str, Enum):
    SCENARIO1 = "scenario1"  # time invariant: LoS (theta=0) or Rayleigh (theta=1)
    SCENARIO2 = "scenario2"  # time varying: Clarke's model, theta = velocity


DEFAULT_LATENT_VALUES = {
    ScenarioKind.SCENARIO1: [0.0, 1.0],
    ScenarioKind.SCENARIO2: [5.0, 15.0, 30.0],
}


class ClarkeConstants(BaseModel):
    """Physical constants of the Clarke autocorrelation J0(2 pi f T_s k theta / c)"""
    f_carrier: float = Field(2.9e9, gt=0, description="Carrier frequency (Hz)")
    T_s: float = Field(1e-3, gt=0, description="Symbol duration (s)")
    c: float = Field(3e8, gt=0, description="Speed of light (m/s)")


class ScenarioConfig(BaseModel):
    """Scenario description; all randomness of an experiment flows from `seed`"""
    kind: ScenarioKind = ScenarioKind.SCENARIO2
    d: int = Field(4, ge=1, description="Receive antenna count")
    latent_values: Optional[List[float]] = None
    latent_prior: Union[Literal["uniform"], List[float]] = "uniform"
    snr_db: float = 0.0
    clarke_constants: ClarkeConstants = Field(default_factory=ClarkeConstants)
    seed: int = Field(0, ge=0, lt=2**64)
    constellation: Literal["qpsk", "qam16", "bpsk"] = "qpsk"
    normalize: bool = False
    half_power_scenario2: bool = False

    @field_validator("kind", mode="before")
    @classmethod
    def parse_kind(cls, v):
        if isinstance(v, str):
            return v.strip().lower()
        return v

    @model_validator(mode="after")
    def check_latents(self) -> "ScenarioConfig":
        if self.latent_values is None:
            self.latent_values = list(DEFAULT_LATENT_VALUES[self.kind])
        if len(self.latent_values) == 0:
            raise ValueError("latent_values must not be empty")
        if len(set(self.latent_values)) != len(self.latent_values):
            raise ValueError("latent_values must be distinct")

        if self.kind == ScenarioKind.SCENARIO1:
            unknown = [t for t in self.latent_values if t not in (0.0, 1.0)]
            if unknown:
                raise ValueError(f"Scenario 1 latent values must be in {{0, 1}}, got {unknown}")
        elif any(t <= 0 for t in self.latent_values):
            raise ValueError("Scenario 2 latent values (velocities) must be positive")

        if isinstance(self.latent_prior, list):
            if len(self.latent_prior) != len(self.latent_values):
                raise ValueError("latent_prior must have one weight per latent value")
            if any(w < 0 for w in self.latent_prior) or sum(self.latent_prior) <= 0:
                raise ValueError("latent_prior weights must be non-negative with positive sum")
        return self

    @property
    def sigma2(self) -> float:
        """Per-real-component noise variance; SNR (linear) = 1 / sigma2"""
        return float(10.0 ** (-self.snr_db / 10.0))

    def latent_probabilities(self) -> np.ndarray:
        """Prior f_Theta over latent_values as a probability vector"""
        if self.latent_prior == "uniform":
            n = len(self.latent_values)
            return np.full(n, 1.0 / n)
        weights = np.asarray(self.latent_prior, dtype=float)
        return weights / weights.sum()


class TrainConfig(BaseModel):
    """Gradient-descent training of the single-layer attention estimator"""
    context_len: int = Field(700, ge=1)
    epochs: int = Field(1000, ge=0)
    batch_size: int = Field(128, ge=1)
    learning_rate: float = Field(0.01, ge=0)
    min_learning_rate: float = Field(1e-6, ge=0)
    init: Literal["zero", "scaled_identity"] = "zero"
    init_scale: float = 1.0
    optimizer: Literal["gd"] = "gd"
    steps_per_epoch: int = Field(1, ge=1)
    eval_prompts: int = Field(256, ge=1)


class EvalPoint(BaseModel):
    """Scores of one estimator at one context length; None marks an absent cell"""
    k: int = Field(..., ge=0)
    ce_mean: Optional[float] = None
    ce_ci90: Optional[float] = Field(None, ge=0.0)
    acc_pct: Optional[float] = Field(None, ge=0.0, le=100.0)
    trials: int = Field(0, ge=0)


class EvalResult(BaseModel):
    """Cross-entropy (nats) and MAP accuracy curve of one estimator"""
    estimator: str
    points: List[EvalPoint] = Field(default_factory=list)
    n_stat: int = 10000

    def point(self, k: int) -> EvalPoint:
        for p in self.points:
            if p.k == k:
                return p
        raise KeyError(k)


class WeightsDocument(BaseModel):
    """Serialized attention weights W (row-major) with their provenance"""
    d: int = Field(..., ge=1)
    S: int = Field(..., ge=1)
    W: List[float]
    train_config: Optional[TrainConfig] = None
    seed: Optional[int] = None

    @model_validator(mode="after")
    def check_shape(self) -> "WeightsDocument":
        if len(self.W) != (2 * self.d) ** 2:
            raise ValueError(f"W must have {(2 * self.d) ** 2} entries for d={self.d}, got {len(self.W)}")
        return self


def load_scenario_config(path: Union[str, Path]) -> ScenarioConfig:
    """
    Load a scenario document from JSON (or YAML by extension)

    Raises:
        ConfigurationError: unreadable file or invalid document
    """
    path = Path(path)
    try:
        text = path.read_text()
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
        config = ScenarioConfig.model_validate(data)
    except (OSError, ValueError, yaml.YAMLError) as e:
        raise ConfigurationError(f"Invalid scenario config {path}: {e}") from e

    logger.info(f"Loaded {config.kind.value} config from {path} (d={config.d}, snr={config.snr_db} dB)")
    return config


def save_scenario_config(config: ScenarioConfig, path: Union[str, Path]) -> Path:
    """Write a scenario document as JSON"""
    path = Path(path)
    path.write_text(config.model_dump_json(indent=2))
    return path
