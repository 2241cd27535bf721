#!/usr/bin/env python
"""
Script to run the end-to-end acceptance checks on the builtin profiles.

For each profile a dataset is generated, a rule layer is trained with the
profile defaults and evaluated greedily on the test split, once per seed. A
profile passes when, averaged over the seeds, the corrected violation rate is at
most half the predictor's, accuracy improves by at least two points and the last
epoch's return beats the first. A final run with an error-free predictor must
keep at least 99.5% accuracy.

Usage:
    python scripts/run_acceptance.py [--profile sleep] [--seed 0] [--seeds 5] [--set train.epochs=20]
"""
import argparse
import logging
import os
import sys
from typing import Any, Dict, List, Tuple

import numpy as np

# Add the parent directory to sys.path to enable imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.cli.commands import configure_logging  # noqa: E402
from app.core.config import resolve_config  # noqa: E402
from app.core.errors import RuleLayerError  # noqa: E402
from app.core.label_rules import load_rules  # noqa: E402
from app.core.mdp_env import RewardSpec  # noqa: E402
from app.core.schema import RunConfig  # noqa: E402
from app.core.trainer import Evaluation, TrainResult, evaluate_dataset, train  # noqa: E402
from app.data.synth import generate_dataset  # noqa: E402

logger = logging.getLogger(__name__)

Check = Tuple[str, bool, str]


def _seeds(seed: int) -> Dict[str, Any]:
    return {"synth": {"seed": seed}, "train": {"seed": seed}}


def run_once(cfg: RunConfig) -> Tuple[TrainResult, Evaluation]:
    """Generate, train and evaluate one configuration."""
    rules = load_rules(cfg.synth.rules)
    train_set, test_set = generate_dataset(cfg.synth, rules)
    result = train(train_set, cfg.train, rules)
    return result, evaluate_dataset(result.layer, test_set, RewardSpec(cfg.train.reward_variant, rules))


def check_profile(profile: str, seeds: List[int], overrides: List[str]) -> List[Check]:
    """Average the correction metrics of a profile over seeds; returns (name, passed, detail) checks."""
    rows = []
    for seed in seeds:
        cfg = resolve_config(profile, overrides=overrides, flags=_seeds(seed))
        result, evaluation = run_once(cfg)
        rows.append([
            evaluation.pred_violation_rate, evaluation.corrected_violation_rate,
            evaluation.pred_accuracy, evaluation.corrected_accuracy,
            result.stats[0].mean_return, result.stats[-1].mean_return,
        ])
        logger.info("Profile %s seed %d done", profile, seed)
    pred_v, corr_v, pred_acc, corr_acc, first, last = np.mean(np.array(rows), axis=0)
    return [
        ("violation rate halved", corr_v <= 0.5 * pred_v, f"{pred_v:.4f} -> {corr_v:.4f}"),
        ("accuracy +2 points", corr_acc - pred_acc >= 0.02, f"{pred_acc:.4f} -> {corr_acc:.4f}"),
        ("return improves", last > first, f"{first:.3f} -> {last:.3f}"),
    ]


def check_perfect_predictor(seed: int, overrides: List[str]) -> List[Check]:
    """Train on error-free predictions; the layer must leave them alone."""
    cfg = resolve_config("sleep", overrides=["synth.predictor_error=0", *overrides], flags=_seeds(seed))
    _, evaluation = run_once(cfg)
    floor = -0.05 * cfg.synth.T
    return [
        ("accuracy kept", evaluation.corrected_accuracy >= 0.995, f"{evaluation.corrected_accuracy:.4f}"),
        ("return near zero", evaluation.mean_return >= floor, f"{evaluation.mean_return:.3f} >= {floor:.1f}"),
    ]


def _report(title: str, checks: List[Check]) -> bool:
    print(f"\n{title}")
    for name, passed, detail in checks:
        print(f"  {'✅' if passed else '❌'} {name}: {detail}")
    return all(passed for _, passed, _ in checks)


def main() -> int:
    """
    Parse command line arguments and run the acceptance checks.
    """
    parser = argparse.ArgumentParser(description="Run the end-to-end acceptance checks")
    parser.add_argument(
        "--profile",
        action="append",
        choices=["sleep", "seizure"],
        help="Profile to check (repeatable; default: both)"
    )
    parser.add_argument("--seed", type=int, default=0, help="First seed")
    parser.add_argument("--seeds", type=int, default=5, help="Number of seeds averaged per profile")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Config override applied to every run"
    )
    parser.add_argument("--skip-perfect", action="store_true", help="Skip the error-free predictor run")
    args = parser.parse_args()

    configure_logging()
    seeds = list(range(args.seed, args.seed + max(args.seeds, 1)))
    ok = True
    try:
        for profile in args.profile or ["sleep", "seizure"]:
            ok &= _report(f"Profile {profile} ({len(seeds)} seeds)", check_profile(profile, seeds, args.overrides))
        if not args.skip_perfect:
            ok &= _report("Error-free predictor", check_perfect_predictor(args.seed, args.overrides))
    except RuleLayerError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code

    print("\n✅ All acceptance checks passed" if ok else "\n❌ Some acceptance checks failed")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
