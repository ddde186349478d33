"""
Command-line entry point: simulate, evaluate, train-sat and verify

Exit codes: 0 on success, 1 on numerical failure or a failing verify check,
2 on usage or configuration errors.
"""

from pathlib import Path
from typing import List, Optional
import argparse
import json
import logging
import sys

from pydantic import ValidationError

from ice import __version__
from ice.app.config import init_settings
from ice.app.log_config import configure_logging
from ice.app.schemas import ScenarioConfig, TrainConfig, load_scenario_config
from ice.harness.datasets import write_dataset
from ice.harness.evaluation import DEFAULT_ESTIMATORS, evaluate_curve, parse_estimators, write_eval_csv
from ice.harness.verification import run_verification
from ice.processing.channel import scenario_constellation, scenario_noise
from ice.processing.exceptions import ConfigurationError, NumericalError
from ice.processing.sat import AttentionWeights, train, write_trace_csv
from ice.processing.utils import trial_rng

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ice",
        description="In-context estimation of transmitted symbols over simulated SIMO channels",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Override LOG_LEVEL")
    parser.add_argument("--log-json", action="store_true", default=None, help="JSON log records on stderr")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Scenario document (.json, .yaml)")
    common.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    common.add_argument("--snr-db", type=float, help="SNR in dB (overrides the config)")
    common.add_argument("--out", type=Path, help="Output directory (defaults to OUTPUT_DIR)")

    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="Write a prompt dataset")
    simulate.add_argument("--kmax", type=int, default=10, help="Context examples per prompt")
    simulate.add_argument("--trials", type=int, default=1000, help="Number of prompts")

    evaluate = sub.add_parser("evaluate", parents=[common], help="Score estimators for k = 0..kmax")
    evaluate.add_argument("--kmax", type=int, default=10)
    evaluate.add_argument("--trials", type=int, help="Trials per k (defaults to N_STAT)")
    evaluate.add_argument("--estimators", default=",".join(DEFAULT_ESTIMATORS), help="Comma list of estimators")
    evaluate.add_argument("--weights", type=Path, help="Trained SAT weights (defaults to Sigma_z^-1)")
    evaluate.add_argument("--independent", action="store_true", help="Fresh prompts per k instead of prefixes")

    train_sat = sub.add_parser("train-sat", parents=[common], help="Train the single-layer attention estimator")
    train_sat.add_argument("--train-config", type=Path, help="TrainConfig JSON document")
    train_sat.add_argument("--epochs", type=int, help="Override the epoch count")
    train_sat.add_argument("--kmax", type=int, help="Override the training context length")

    verify = sub.add_parser(
        "verify",
        help="Run the verification suite",
        description="Run the verification suite. Every check builds its own fixed scenarios, "
        "so --config and --snr-db do not apply; only the master seed varies.",
    )
    verify.add_argument("--seed", type=int, help="Master seed (defaults to DEFAULT_SEED)")
    verify.add_argument("--full", action="store_true", help="Acceptance-scale sizes")
    verify.add_argument("--out", type=Path, help="Also write the report to this file")
    return parser


def _scenario(args, settings) -> ScenarioConfig:
    """Config document with --seed / --snr-db applied and revalidated"""
    config = load_scenario_config(args.config) if args.config else ScenarioConfig(seed=settings.DEFAULT_SEED)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.snr_db is not None:
        updates["snr_db"] = args.snr_db
    if updates:
        config = ScenarioConfig.model_validate({**config.model_dump(), **updates})
    return config


def _out_dir(args, settings) -> Path:
    out = Path(args.out) if args.out else Path(settings.OUTPUT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, settings) -> int:
    config = _scenario(args, settings)
    if args.kmax < 0 or args.trials < 1:
        raise ConfigurationError("--kmax must be >= 0 and --trials >= 1")
    write_dataset(config, args.kmax, args.trials, _out_dir(args, settings))
    return EXIT_OK


def cmd_evaluate(args, settings) -> int:
    config = _scenario(args, settings)
    names = parse_estimators(args.estimators)
    weights = AttentionWeights.load(args.weights) if args.weights else None
    trials = args.trials if args.trials is not None else settings.N_STAT

    results = evaluate_curve(
        config, names, args.kmax, trials,
        workers=settings.ICE_THREADS, weights=weights, independent=args.independent,
    )
    out = _out_dir(args, settings)
    write_eval_csv(results, out / "eval.csv")
    (out / "eval.json").write_text(json.dumps([r.model_dump() for r in results], indent=2))
    logger.info(f"Wrote {out / 'eval.csv'}")
    return EXIT_OK


def cmd_train_sat(args, settings) -> int:
    config = _scenario(args, settings)
    train_config = TrainConfig()
    if args.train_config:
        try:
            train_config = TrainConfig.model_validate_json(Path(args.train_config).read_text())
        except OSError as e:
            raise ConfigurationError(f"Cannot read {args.train_config}: {e}") from e
    updates = {}
    if args.epochs is not None:
        updates["epochs"] = args.epochs
    if args.kmax is not None:
        updates["context_len"] = args.kmax
    if updates:
        train_config = TrainConfig.model_validate({**train_config.model_dump(), **updates})

    constellation = scenario_constellation(config)
    noise = scenario_noise(config)
    result = train(config, train_config, trial_rng(config.seed, 0), constellation, noise)

    out = _out_dir(args, settings)
    result.weights.save(out / "weights.json", constellation.size, train_config, config.seed)
    write_trace_csv(result.trace, out / "trace.csv")
    if result.trace:
        logger.info(f"Final held-out CE {result.trace[-1].eval_ce:.4f} (learning rate {result.final_learning_rate:g})")
    return EXIT_OK


def cmd_verify(args, settings) -> int:
    seed = args.seed if args.seed is not None else settings.DEFAULT_SEED
    report = run_verification(seed, full=args.full)
    text = report.render()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK if report.passed else EXIT_FAILURE


COMMANDS = {
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "train-sat": cmd_train_sat,
    "verify": cmd_verify,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        settings = init_settings()
    except ValidationError as e:
        sys.stderr.write(f"Invalid settings: {e}\n")
        return EXIT_USAGE

    configure_logging(
        args.log_level or settings.LOG_LEVEL,
        settings.LOG_JSON if args.log_json is None else args.log_json,
    )
    logger.info(f"{settings.APP_NAME} v{settings.APP_VERSION}: {args.command}")

    try:
        return COMMANDS[args.command](args, settings)
    except (ConfigurationError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
