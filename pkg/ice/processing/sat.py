"""
Single-layer softmax-attention estimator (SAT)

With query/key weights reduced to W = W_Q^T W_K and the value matrix
selecting the label block, the query output is
p_i = sum_{n: s_n = i} softmax_n(y_q^T W y_n).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union
import csv
import logging

import numpy as np
from scipy.special import logsumexp

from ice.app.schemas import ScenarioConfig, TrainConfig, WeightsDocument
from ice.processing.channel import (
    Constellation,
    NoiseSpec,
    Prompt,
    sample_prompt,
    scenario_constellation,
    scenario_noise,
)
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.oracle import Posterior, kl_divergence, true_posterior
from ice.processing.utils import LOG_FLOOR

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TokenMatrix:
    """Tokens u_n = [y_n; e_{s_n}] for the context and u_N = [y_q; 0] for the query"""
    tokens: np.ndarray
    d: int
    S: int

    @classmethod
    def from_prompt(cls, prompt: Prompt) -> "TokenMatrix":
        S = prompt.constellation.size
        labels = np.zeros((prompt.k + 1, S))
        labels[np.arange(prompt.k), prompt.s_seq] = 1.0
        return cls(np.hstack([prompt.y_all, labels]), prompt.d, S)

    @property
    def context(self) -> np.ndarray:
        return self.tokens[:-1]

    @property
    def query(self) -> np.ndarray:
        return self.tokens[-1]

    @property
    def observations(self) -> np.ndarray:
        return self.tokens[:, : 2 * self.d]

    @property
    def labels(self) -> np.ndarray:
        return self.tokens[:, 2 * self.d:]


@dataclass(frozen=True, eq=False)
class AttentionWeights:
    """The 2d x 2d product W = W_Q^T W_K"""
    W: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape[0] % 2:
            raise ConfigurationError(f"W must be a 2d x 2d matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise NumericalError("Attention weights contain non-finite entries")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def d(self) -> int:
        return self.W.shape[0] // 2

    @classmethod
    def zeros(cls, d: int) -> "AttentionWeights":
        return cls(np.zeros((2 * d, 2 * d)))

    @classmethod
    def optimal(cls, noise: NoiseSpec) -> "AttentionWeights":
        """W = Sigma_z^-1, the asymptotically Bayes-optimal parameter"""
        return cls(noise.sigma_real_inv)

    def to_document(self, S: int, train_config: Optional[TrainConfig] = None,
                    seed: Optional[int] = None) -> WeightsDocument:
        return WeightsDocument(d=self.d, S=S, W=self.W.ravel().tolist(),
                               train_config=train_config, seed=seed)

    @classmethod
    def from_document(cls, document: WeightsDocument) -> "AttentionWeights":
        return cls(np.asarray(document.W, dtype=float).reshape(2 * document.d, 2 * document.d))

    def save(self, path: Union[str, Path], S: int, train_config: Optional[TrainConfig] = None,
             seed: Optional[int] = None) -> Path:
        path = Path(path)
        path.write_text(self.to_document(S, train_config, seed).model_dump_json(indent=2))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "AttentionWeights":
        try:
            document = WeightsDocument.model_validate_json(Path(path).read_text())
        except (OSError, ValueError) as e:
            raise ConfigurationError(f"Invalid weights document {path}: {e}") from e
        return cls.from_document(document)


def _attention_scores(y_seq: np.ndarray, y_q: np.ndarray, W: np.ndarray) -> np.ndarray:
    """y_q^T W y_n for every context observation"""
    return y_seq @ (W.T @ y_q)


def _group_log_mass(scores: np.ndarray, labels: np.ndarray, S: int) -> np.ndarray:
    """log sum_{n: s_n = i} exp(scores_n) for every label i (-inf for empty groups)"""
    out = np.full(S, -np.inf)
    for i in np.unique(labels):
        out[i] = logsumexp(scores[labels == i])
    return out


def sat_attention_output(
    prompt: Prompt, weights: AttentionWeights, include_query_self_term: bool = False
) -> np.ndarray:
    """
    Label block of the query output token

    With the query self term the softmax also normalizes over exp(y_q^T W y_q)
    whose value block is zero, so the output sums to less than one.
    """
    if prompt.k < 1:
        raise ConfigurationError("SAT requires at least one example")
    scores = _attention_scores(prompt.y_seq, prompt.y_query, weights.W)
    group = _group_log_mass(scores, prompt.s_seq, prompt.constellation.size)
    all_scores = scores
    if include_query_self_term:
        all_scores = np.append(scores, prompt.y_query @ weights.W @ prompt.y_query)
    return np.exp(group - logsumexp(all_scores))


def sat_posterior(
    prompt: Prompt, weights: AttentionWeights, include_query_self_term: bool = False
) -> Posterior:
    """
    Finite-context SAT posterior p^N

    Args:
        prompt: Prompt with k >= 1 context examples
        weights: Attention weights W
        include_query_self_term: Add the query's own score to the softmax
            denominator; the output is renormalized before it is returned

    Returns:
        Posterior over symbol indices
    """
    if prompt.k < 1:
        raise ConfigurationError("SAT requires at least one example")
    scores = _attention_scores(prompt.y_seq, prompt.y_query, weights.W)
    group = _group_log_mass(scores, prompt.s_seq, prompt.constellation.size)
    if include_query_self_term:
        self_score = prompt.y_query @ weights.W @ prompt.y_query
        group = group - logsumexp(np.append(scores, self_score))
    return Posterior.from_log_scores(group)


def sat_posterior_limit(
    y_q: np.ndarray, H: np.ndarray, weights: AttentionWeights, constellation: Constellation
) -> Posterior:
    """Infinite-context limit p_i proportional to rho_i exp(y_q^T W H x_i)"""
    scores = constellation.log_priors + np.asarray(y_q) @ weights.W @ np.asarray(H) @ constellation.lifted.T
    return Posterior.from_log_scores(scores)


@dataclass(frozen=True, eq=False)
class PromptBatch:
    """Equal-length prompts stacked for vectorized loss and gradient evaluation"""
    y_seq: np.ndarray  # (B, N, 2d)
    s_seq: np.ndarray  # (B, N)
    y_query: np.ndarray  # (B, 2d)
    s_query: np.ndarray  # (B,)
    S: int

    @classmethod
    def from_prompts(cls, prompts: Sequence[Prompt]) -> "PromptBatch":
        if not prompts:
            raise ConfigurationError("Empty prompt batch")
        lengths = {p.k for p in prompts}
        if len(lengths) != 1:
            raise ConfigurationError(f"Prompts in a batch must share one context length, got {sorted(lengths)}")
        if lengths.pop() < 1:
            raise ConfigurationError("SAT requires at least one example")
        return cls(
            np.stack([p.y_seq for p in prompts]),
            np.stack([p.s_seq for p in prompts]),
            np.stack([p.y_query for p in prompts]),
            np.array([p.s_query_truth for p in prompts]),
            prompts[0].constellation.size,
        )

    @property
    def size(self) -> int:
        return int(self.s_query.size)


def _batch_terms(batch: PromptBatch, W: np.ndarray):
    scores = np.einsum("bi,ij,bnj->bn", batch.y_query, W, batch.y_seq)
    in_group = batch.s_seq == batch.s_query[:, None]
    log_total = logsumexp(scores, axis=1)
    with np.errstate(divide="ignore"):
        log_group = logsumexp(np.where(in_group, scores, -np.inf), axis=1)
    return scores, in_group, log_total, log_group


def _as_batch(batch: Union[PromptBatch, Sequence[Prompt]]) -> PromptBatch:
    return batch if isinstance(batch, PromptBatch) else PromptBatch.from_prompts(batch)


def cross_entropy_loss(batch: Union[PromptBatch, Sequence[Prompt]], weights: AttentionWeights) -> float:
    """Mean -log p^N_{s_q} over the batch, with p floored at 1e-300"""
    batch = _as_batch(batch)
    _, _, log_total, log_group = _batch_terms(batch, weights.W)
    log_p = np.maximum(log_group - log_total, LOG_FLOOR)
    return float(-np.mean(log_p))


def loss_gradient(batch: Union[PromptBatch, Sequence[Prompt]], weights: AttentionWeights) -> np.ndarray:
    """
    Exact gradient of cross_entropy_loss with respect to W

    For one prompt, d(-log p_{s_q})/d score_n = a_n - b_n with a the softmax over
    all examples and b the softmax restricted to the true label group; each
    score y_q^T W y_n has gradient y_q y_n^T. Prompts whose floored loss is
    constant contribute nothing.
    """
    batch = _as_batch(batch)
    scores, in_group, log_total, log_group = _batch_terms(batch, weights.W)
    active = (log_group - log_total) > LOG_FLOOR

    a = np.exp(scores - log_total[:, None])
    with np.errstate(invalid="ignore"):
        b = np.where(in_group, np.exp(scores - log_group[:, None]), 0.0)
    coeff = np.where(active[:, None], a - b, 0.0)

    mixed = np.einsum("bn,bnj->bj", coeff, batch.y_seq)
    return np.einsum("bi,bj->ij", batch.y_query, mixed) / batch.size


def convexity_probe(
    y_q: np.ndarray,
    H: np.ndarray,
    W1: np.ndarray,
    W2: np.ndarray,
    lam: float,
    constellation: Constellation,
    slack: float = 1e-9,
) -> bool:
    """
    Check convexity of W -> -log p_i(y_q, H; W) along the segment [W1, W2]

    Every symbol index i is tested at the point lam W1 + (1 - lam) W2.
    """
    W1, W2 = np.asarray(W1, dtype=float), np.asarray(W2, dtype=float)
    mixed = lam * W1 + (1.0 - lam) * W2
    loss = lambda W: -sat_posterior_limit(y_q, H, AttentionWeights(W), constellation).log_probs
    lhs = loss(mixed)
    rhs = lam * loss(W1) + (1.0 - lam) * loss(W2)
    return bool(np.all(lhs <= rhs + slack))


class LossEstimate(NamedTuple):
    mean: float
    stderr: float


class LossDecomposition(NamedTuple):
    loss: LossEstimate
    conditional_entropy: LossEstimate
    expected_kl: LossEstimate


def _draw_queries(
    config: ScenarioConfig, constellation: Constellation, noise: NoiseSpec,
    n_draws: int, rng: np.random.Generator,
) -> List[Prompt]:
    return [sample_prompt(config, 0, constellation, noise, rng) for _ in range(n_draws)]


def _estimate(values: np.ndarray) -> LossEstimate:
    stderr = float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else 0.0
    return LossEstimate(float(values.mean()), stderr)


def asymptotic_loss(
    config: ScenarioConfig,
    weights: AttentionWeights,
    n_draws: int,
    rng: np.random.Generator,
    constellation: Optional[Constellation] = None,
    noise: Optional[NoiseSpec] = None,
) -> LossEstimate:
    """Monte Carlo estimate of L(W) = -E log p_{S_q}(Y_q, H; W) with its standard error"""
    constellation = constellation or scenario_constellation(config)
    noise = noise or scenario_noise(config)
    queries = _draw_queries(config, constellation, noise, n_draws, rng)
    values = np.array([
        -sat_posterior_limit(q.y_query, q.H_query, weights, constellation).log_probs[q.s_query_truth]
        for q in queries
    ])
    return _estimate(values)


def loss_decomposition(
    config: ScenarioConfig,
    weights: AttentionWeights,
    n_draws: int,
    rng: np.random.Generator,
    constellation: Optional[Constellation] = None,
    noise: Optional[NoiseSpec] = None,
) -> LossDecomposition:
    """
    L(W) = H[S_q | Y_q, H] + E[KL(p(Sigma_z^-1) || p(W))]

    Each term is averaged over draws of (H, y_q) with the symbol integrated out
    under the true posterior.
    """
    constellation = constellation or scenario_constellation(config)
    noise = noise or scenario_noise(config)
    queries = _draw_queries(config, constellation, noise, n_draws, rng)

    entropies, kls = np.empty(n_draws), np.empty(n_draws)
    for t, q in enumerate(queries):
        truth = true_posterior(q.y_query, q.H_query, noise, constellation)
        model = sat_posterior_limit(q.y_query, q.H_query, weights, constellation)
        entropies[t] = truth.entropy()
        kls[t] = kl_divergence(truth, model)
    return LossDecomposition(_estimate(entropies + kls), _estimate(entropies), _estimate(kls))


class TraceRow(NamedTuple):
    epoch: int
    train_ce: float
    eval_ce: float


@dataclass
class TrainResult:
    weights: AttentionWeights
    trace: List[TraceRow] = field(default_factory=list)
    final_learning_rate: float = 0.0


def _gd_step(W: np.ndarray, gradient: np.ndarray, lr: float) -> np.ndarray:
    return W - lr * gradient


# TrainConfig.optimizer -> update rule (W, gradient, learning rate) -> new W
OPTIMIZERS = {"gd": _gd_step}


def _initial_weights(d: int, train_config: TrainConfig) -> AttentionWeights:
    if train_config.init == "scaled_identity":
        return AttentionWeights(train_config.init_scale * np.eye(2 * d))
    return AttentionWeights.zeros(d)


def _sample_batch(
    config: ScenarioConfig, train_config: TrainConfig, constellation: Constellation,
    noise: NoiseSpec, size: int, rng: np.random.Generator,
) -> PromptBatch:
    prompts = [sample_prompt(config, train_config.context_len, constellation, noise, rng) for _ in range(size)]
    return PromptBatch.from_prompts(prompts)


def train(
    config: ScenarioConfig,
    train_config: TrainConfig,
    rng: np.random.Generator,
    constellation: Optional[Constellation] = None,
    noise: Optional[NoiseSpec] = None,
) -> TrainResult:
    """
    Gradient descent on the finite-context cross-entropy

    Every step draws a fresh batch. After each epoch the loss on a fixed
    held-out set is evaluated; if it increased, W is reset to the best weights
    so far and the learning rate is halved (not below min_learning_rate).

    Args:
        config: Scenario the prompts are drawn from
        train_config: Optimization settings
        rng: Generator; the run is deterministic given its state

    Returns:
        TrainResult with final weights and per-epoch (epoch, train_ce, eval_ce)

    Raises:
        NumericalError: if the loss becomes NaN
    """
    constellation = constellation or scenario_constellation(config)
    noise = noise or scenario_noise(config)
    update = OPTIMIZERS[train_config.optimizer]
    weights = _initial_weights(config.d, train_config)
    result = TrainResult(weights, [], train_config.learning_rate)
    if train_config.epochs == 0:
        return result

    eval_batch = _sample_batch(config, train_config, constellation, noise, train_config.eval_prompts, rng)
    best_weights = weights
    best_eval = cross_entropy_loss(eval_batch, weights)
    lr = train_config.learning_rate
    logger.info(
        f"Training SAT ({train_config.optimizer}): d={config.d}, S={constellation.size}, N={train_config.context_len}, "
        f"epochs={train_config.epochs}, batch={train_config.batch_size}, lr={lr:g}, initial eval CE={best_eval:.4f}"
    )

    step = 0
    for epoch in range(1, train_config.epochs + 1):
        train_losses = []
        for _ in range(train_config.steps_per_epoch):
            step += 1
            batch = _sample_batch(config, train_config, constellation, noise, train_config.batch_size, rng)
            loss = cross_entropy_loss(batch, weights)
            if np.isnan(loss):
                raise NumericalError(f"NaN training loss at step {step} (learning rate {lr:g})")
            train_losses.append(loss)
            gradient = loss_gradient(batch, weights)
            if not np.all(np.isfinite(gradient)):
                raise NumericalError(f"Non-finite gradient at step {step} (learning rate {lr:g})")
            weights = AttentionWeights(update(weights.W, gradient, lr))

        eval_ce = cross_entropy_loss(eval_batch, weights)
        if np.isnan(eval_ce):
            raise NumericalError(f"NaN held-out loss at step {step} (learning rate {lr:g})")
        if eval_ce > best_eval:
            new_lr = max(lr / 2.0, train_config.min_learning_rate)
            logger.warning(
                f"Epoch {epoch}: held-out CE rose to {eval_ce:.5f} (best {best_eval:.5f}); "
                f"reverting and setting learning rate {lr:g} -> {new_lr:g}"
            )
            weights, eval_ce, lr = best_weights, best_eval, new_lr
        else:
            best_weights, best_eval = weights, eval_ce

        result.trace.append(TraceRow(epoch, float(np.mean(train_losses)), float(eval_ce)))
        if epoch % 100 == 0 or epoch == train_config.epochs:
            logger.info(f"Epoch {epoch}/{train_config.epochs}: train CE={np.mean(train_losses):.4f}, eval CE={eval_ce:.4f}")

    result.weights = weights
    result.final_learning_rate = lr
    return result


def write_trace_csv(trace: Sequence[TraceRow], path: Union[str, Path]) -> Path:
    """Write the loss trace as CSV with columns epoch,train_ce,eval_ce"""
    path = Path(path)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["epoch", "train_ce", "eval_ce"])
        for row in trace:
            writer.writerow([row.epoch, f"{row.train_ce:.10g}", f"{row.eval_ce:.10g}"])
    return path


def smoothed(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average used to judge trace monotonicity"""
    values = np.asarray(values, dtype=float)
    if values.size < window:
        return values
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
