"""
Single-layer attention experiment

Trains the attention estimator on long prompts and compares it with the
closed-form weights Sigma_z^-1:
1. Train by gradient descent
2. Held-out cross-entropy of trained vs closed-form weights
3. Asymptotic loss split into conditional entropy and expected KL

Usage:
    python scripts/run_single_layer_experiment.py [--epochs 1000] [--context 700] [--out results]
"""

from pathlib import Path
import argparse
import sys

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from ice.app.config import get_settings
from ice.app.log_config import configure_logging
from ice.app.schemas import ScenarioConfig, ScenarioKind, TrainConfig
from ice.processing.channel import sample_prompt, scenario_constellation, scenario_noise
from ice.processing.sat import (
    AttentionWeights,
    cross_entropy_loss,
    loss_decomposition,
    smoothed,
    train,
    write_trace_csv,
)
from ice.processing.utils import trial_rng


def print_section(title):
    """Print a section header"""
    print("\n" + "=" * 60)
    print(f"  {title}")
    print("=" * 60)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--context", type=int, default=700)
    parser.add_argument("--snr-db", type=float, default=0.0)
    parser.add_argument("--draws", type=int, default=10000)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    settings = get_settings()
    configure_logging(settings.LOG_LEVEL, settings.LOG_JSON)
    seed = settings.DEFAULT_SEED
    out_dir = args.out or Path(settings.OUTPUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)

    config = ScenarioConfig(kind=ScenarioKind.SCENARIO2, d=4, snr_db=args.snr_db, seed=seed)
    train_config = TrainConfig(context_len=args.context, epochs=args.epochs)
    constellation, noise = scenario_constellation(config), scenario_noise(config)

    print_section("1. Training")
    result = train(config, train_config, trial_rng(seed, 0), constellation, noise)
    trace = smoothed([row.train_ce for row in result.trace], window=50)
    for epoch in range(0, len(trace), max(1, len(trace) // 10)):
        print(f"   epoch {epoch + 1:5d}: train CE {trace[epoch]:.4f}")
    write_trace_csv(result.trace, out_dir / "trace.csv")
    result.weights.save(out_dir / "weights.json", constellation.size, train_config, seed)

    print_section("2. Held-out cross-entropy")
    optimal = AttentionWeights.optimal(noise)
    rng = trial_rng(seed, 1)
    held_out = [sample_prompt(config, args.context, constellation, noise, rng) for _ in range(512)]
    trained_ce = cross_entropy_loss(held_out, result.weights)
    optimal_ce = cross_entropy_loss(held_out, optimal)
    print(f"   trained W:      {trained_ce:.4f} nats")
    print(f"   Sigma_z^-1:     {optimal_ce:.4f} nats")
    status = "✅" if trained_ce <= 1.02 * optimal_ce else "❌"
    print(f"{status} trained within 2% of closed form: {trained_ce / optimal_ce:.4f}")

    print_section("3. Asymptotic loss decomposition")
    for label, weights in (("trained W", result.weights), ("Sigma_z^-1", optimal)):
        parts = loss_decomposition(config, weights, args.draws, trial_rng(seed, 2), constellation, noise)
        print(
            f"   {label:<11} L={parts.loss.mean:.4f} ± {parts.loss.stderr:.4f}  "
            f"H={parts.conditional_entropy.mean:.4f}  KL={parts.expected_kl.mean:.5f}"
        )
    print(f"   ||W - Sigma_z^-1||_F = {np.linalg.norm(result.weights.W - optimal.W):.4f}")


if __name__ == "__main__":
    main()
