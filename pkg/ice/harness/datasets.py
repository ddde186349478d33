"""
Prompt dataset export for the `simulate` command
"""

from pathlib import Path
from typing import Dict, Optional, Union
import logging

import numpy as np

from ice.app.schemas import ScenarioConfig, save_scenario_config
from ice.processing.channel import complex_to_real, sample_prompt, scenario_constellation, scenario_noise
from ice.processing.exceptions import ConfigurationError
from ice.processing.utils import trial_rng

logger = logging.getLogger(__name__)

PROMPTS_FILE = "prompts.npz"
SCENARIO_FILE = "scenario.json"


def simulate_prompts(config: ScenarioConfig, k: int, n_prompts: int, seed: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Draw n_prompts prompts of length k; prompt t uses trial_rng(seed, t)

    Returns:
        Arrays y (n, k+1, 2d) with the query last, s (n, k+1), theta (n,) and
        h_query (n, 2d) holding [Re h; Im h] at the query index
    """
    if n_prompts < 1:
        raise ConfigurationError(f"n_prompts must be at least 1, got {n_prompts}")
    seed = config.seed if seed is None else seed
    noise = scenario_noise(config)
    constellation = scenario_constellation(config)

    prompts = [sample_prompt(config, k, constellation, noise, trial_rng(seed, t)) for t in range(n_prompts)]
    return {
        "y": np.stack([p.y_all for p in prompts]),
        "s": np.stack([p.s_all for p in prompts]).astype(np.int64),
        "theta": np.array([p.theta for p in prompts], dtype=float),
        "h_query": np.stack([complex_to_real(p.realization.h_at(p.k)) for p in prompts]),
    }


def write_dataset(
    config: ScenarioConfig, k: int, n_prompts: int, out_dir: Union[str, Path], seed: Optional[int] = None
) -> Path:
    """Write prompts.npz and the scenario document into out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = simulate_prompts(config, k, n_prompts, seed)

    path = out_dir / PROMPTS_FILE
    np.savez_compressed(path, **arrays)
    save_scenario_config(config, out_dir / SCENARIO_FILE)
    logger.info(f"Wrote {n_prompts} prompts of length {k} to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        with np.load(path) as data:
            return {name: data[name] for name in data.files}
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"Invalid prompt dataset {path}: {e}") from e
