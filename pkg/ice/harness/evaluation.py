"""
Monte Carlo evaluation of symbol estimators across context lengths

Each trial samples one prompt of length k_max from trial_rng(seed, t) and
scores every estimator on its prefixes k = 0..k_max (query at index k). With
`independent=True` a fresh prompt of length k is drawn from
trial_rng(seed, t, k) instead.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Union
import io
import logging

import numpy as np

from ice.app.schemas import EvalPoint, EvalResult, ScenarioConfig
from ice.processing.baselines import ca_post, ca_post_h_mmse, cu_post, cu_post_h_lmmse, cu_post_h_mmse
from ice.processing.channel import (
    Constellation,
    NoiseSpec,
    Prompt,
    sample_prompt,
    scenario_constellation,
    scenario_noise,
)
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.oracle import Posterior, true_posterior
from ice.processing.sat import AttentionWeights, sat_posterior, sat_posterior_limit
from ice.processing.utils import trial_rng
from ice.worker.pool import run_trials

logger = logging.getLogger(__name__)

CI90_Z = 1.645
NORMALIZATION_TOL = 1e-8
CSV_HEADER = ["estimator", "k", "ce_mean", "ce_ci90", "acc_pct", "trials"]
CSV_COMMENT = "# cross-entropy in nats; ce_ci90 is the 90% normal-approximation half-width"


@dataclass(frozen=True, eq=False)
class EstimatorContext:
    """Everything an estimator may use besides the prompt"""
    config: ScenarioConfig
    noise: NoiseSpec
    constellation: Constellation
    weights: AttentionWeights


Estimator = Callable[[Prompt, EstimatorContext], Optional[Posterior]]


def _sat(prompt: Prompt, ctx: EstimatorContext) -> Optional[Posterior]:
    if prompt.k < 1:
        return None
    return sat_posterior(prompt, ctx.weights)


ESTIMATORS: Dict[str, Estimator] = {
    "ca-post": lambda p, ctx: ca_post(p, p.theta, ctx.config, ctx.noise),
    "cu-post": lambda p, ctx: cu_post(p, ctx.config, ctx.noise),
    "cu-post-h-mmse": lambda p, ctx: cu_post_h_mmse(p, ctx.config, ctx.noise),
    "cu-post-h-lmmse": lambda p, ctx: cu_post_h_lmmse(p, ctx.config, ctx.noise),
    "sat": _sat,
    "sat-limit": lambda p, ctx: sat_posterior_limit(p.y_query, p.H_query, ctx.weights, p.constellation),
    "true-posterior": lambda p, ctx: true_posterior(p.y_query, p.H_query, ctx.noise, p.constellation),
    "uniform": lambda p, ctx: Posterior.from_log_scores(p.constellation.log_priors),
    "ca-post-h-mmse": lambda p, ctx: ca_post_h_mmse(p, p.theta, ctx.config, ctx.noise),
}

DEFAULT_ESTIMATORS = ("ca-post", "cu-post", "cu-post-h-mmse", "cu-post-h-lmmse", "sat", "sat-limit")


def parse_estimators(names: Union[str, Sequence[str]]) -> List[str]:
    """
    Validate a comma list (or sequence) of registry names, keeping order

    Raises:
        ConfigurationError: unknown or duplicate name
    """
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    names = list(names)
    if not names:
        raise ConfigurationError("No estimators given")
    unknown = [n for n in names if n not in ESTIMATORS]
    if unknown:
        raise ConfigurationError(f"Unknown estimator(s) {unknown}; choose from {sorted(ESTIMATORS)}")
    if len(set(names)) != len(names):
        raise ConfigurationError(f"Duplicate estimators in {names}")
    return names


def map_accuracy(posterior: Posterior, s_true: int) -> bool:
    """True when the MAP index (lowest index on ties) is the transmitted symbol"""
    return posterior.map_index() == int(s_true)


def _score(posterior: Optional[Posterior], s_true: int, name: str, k: int):
    if posterior is None:
        return np.nan, np.nan
    error = posterior.normalization_error()
    if error > NORMALIZATION_TOL:
        raise NumericalError(f"{name} posterior at k={k} is off normalization by {error:.3e}")
    return posterior.cross_entropy(s_true), float(map_accuracy(posterior, s_true))


def evaluate_curve(
    config: ScenarioConfig,
    estimators: Union[str, Sequence[str]],
    k_max: int,
    n_trials: int,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    weights: Optional[AttentionWeights] = None,
    independent: bool = False,
) -> List[EvalResult]:
    """
    Cross-entropy and MAP accuracy of each estimator for k = 0..k_max

    Args:
        config: Scenario to draw prompts from
        estimators: Registry names (comma list or sequence)
        k_max: Largest context length
        n_trials: Prompts per context length
        seed: Master seed (defaults to config.seed)
        workers: Thread count (defaults to ICE_THREADS)
        weights: SAT weights (defaults to Sigma_z^-1)
        independent: Fresh prompts per k instead of prefix truncation

    Returns:
        One EvalResult per estimator, in the order given; cells where an
        estimator does not apply (SAT at k=0) carry no values and trials=0

    Raises:
        ConfigurationError: bad names or sizes
        NumericalError: a scored posterior failed the normalization check
    """
    names = parse_estimators(estimators)
    if k_max < 0:
        raise ConfigurationError(f"k_max must be non-negative, got {k_max}")
    if n_trials < 1:
        raise ConfigurationError(f"n_trials must be at least 1, got {n_trials}")

    seed = config.seed if seed is None else seed
    noise = scenario_noise(config)
    constellation = scenario_constellation(config)
    if weights is None:
        weights = AttentionWeights.optimal(noise)
    elif weights.d != config.d:
        raise ConfigurationError(f"Weights are for d={weights.d} but the scenario has d={config.d}")
    ctx = EstimatorContext(config, noise, constellation, weights)
    fns = [ESTIMATORS[n] for n in names]

    def prompt_at(t: int, k: int, full: Optional[Prompt]) -> Prompt:
        if independent:
            return sample_prompt(config, k, constellation, noise, trial_rng(seed, t, k))
        return full.truncate(k)

    def run_trial(t: int) -> np.ndarray:
        # (2, n_estimators, k_max + 1): cross-entropy and correctness
        out = np.full((2, len(names), k_max + 1), np.nan)
        full = None if independent else sample_prompt(config, k_max, constellation, noise, trial_rng(seed, t))
        for k in range(k_max + 1):
            prompt = prompt_at(t, k, full)
            for e, (name, fn) in enumerate(zip(names, fns)):
                out[0, e, k], out[1, e, k] = _score(fn(prompt, ctx), prompt.s_query_truth, name, k)
        return out

    logger.info(
        f"Evaluating {names} on {config.kind.value} (d={config.d}, SNR={config.snr_db} dB): "
        f"k_max={k_max}, trials={n_trials}, seed={seed}, {'independent' if independent else 'prefix'} prompts"
    )
    scores = np.stack(run_trials(run_trial, n_trials, workers))
    return summarize(names, scores, n_trials)


def summarize(names: Sequence[str], scores: np.ndarray, n_trials: int) -> List[EvalResult]:
    """Reduce per-trial scores of shape (trials, 2, estimators, k) in trial order"""
    results = []
    for e, name in enumerate(names):
        points = []
        for k in range(scores.shape[-1]):
            ce = scores[:, 0, e, k]
            correct = scores[:, 1, e, k]
            if np.all(np.isnan(ce)):
                points.append(EvalPoint(k=k))
                continue
            se = float(ce.std(ddof=1) / np.sqrt(ce.size)) if ce.size > 1 else 0.0
            points.append(EvalPoint(
                k=k,
                ce_mean=float(ce.mean()),
                ce_ci90=CI90_Z * se,
                acc_pct=100.0 * float(correct.mean()),
                trials=n_trials,
            ))
        results.append(EvalResult(estimator=name, points=points, n_stat=n_trials))
    return results


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.10g}"


def write_eval_csv(results: Sequence[EvalResult], out: Union[str, Path, TextIO]) -> None:
    """
    Write results as CSV: a units comment line, the header
    estimator,k,ce_mean,ce_ci90,acc_pct,trials, then one row per (estimator, k)
    """
    lines = [CSV_COMMENT, ",".join(CSV_HEADER)]
    for result in results:
        for p in result.points:
            lines.append(",".join([
                result.estimator, str(p.k), _fmt(p.ce_mean), _fmt(p.ce_ci90), _fmt(p.acc_pct), str(p.trials)
            ]))
    text = "\n".join(lines) + "\n"

    if isinstance(out, (str, Path)):
        Path(out).write_text(text)
    else:
        out.write(text)


def format_eval_csv(results: Sequence[EvalResult]) -> str:
    buffer = io.StringIO()
    write_eval_csv(results, buffer)
    return buffer.getvalue()
