#!/usr/bin/env python
"""
Command-line entry point of the rule layer.

Usage:
    rule-layer <command> [options]

Commands:
    generate    Generate synthetic train/test datasets and their manifest
    train       Train a rule layer and write its checkpoint and per-epoch stats
    sweep       Train every hyperparameter cell over several seeds
    eval        Evaluate a checkpoint on the test dataset and write reports
    correct     Correct the labels of an input dataset with a checkpoint

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numerical abort,
1 internal error.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional

from app.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from app.core.config import config_echo, resolve_config, resolve_out_dir
from app.core.errors import ConfigError, DataError, RuleLayerError
from app.core.label_rules import RuleSet, load_rules
from app.core.mdp_env import RewardSpec, write_trace
from app.core.schema import RunConfig
from app.core.sweep import run_sweep, summarize_sweep, write_sweep_summary
from app.core.trainer import evaluate_dataset, train
from app.core.utils.files import atomic_write_json, atomic_write_text, config_hash
from app.data.dataset import Dataset, load_dataset, save_dataset
from app.data.synth import DatasetManifest, generate_dataset
from app.metrics.metrics import violation_counts
from app.metrics.report import report_metadata, write_report, write_stats, write_table

logger = logging.getLogger(__name__)

COMMANDS = ("generate", "train", "sweep", "eval", "correct")


class RunContext:
    """Resolved configuration, output directory and derived paths of one command."""

    def __init__(self, command: str, cfg: RunConfig, workers: int = 1):
        self.command = command
        self.cfg = cfg
        self.workers = workers
        self.out_dir = resolve_out_dir(cfg, command)
        self.config_hash = config_hash(config_echo(cfg))

    def path(self, *parts: str) -> str:
        return os.path.join(self.out_dir, *parts)

    @property
    def train_path(self) -> str:
        return self.cfg.paths.train or self.path("data", "train.jsonl")

    @property
    def test_path(self) -> str:
        return self.cfg.paths.test or self.path("data", "test.jsonl")

    @property
    def checkpoint_path(self) -> str:
        return self.cfg.paths.checkpoint or self.path("checkpoints", "rule_layer.json")

    def metadata(self, seed: int) -> Dict[str, Any]:
        return report_metadata(self.config_hash, seed, command=self.command)

    def echo(self) -> None:
        """Write the resolved config and its hash to <out>/config.json."""
        atomic_write_json(
            self.path("config.json"),
            {"command": self.command, "config": config_echo(self.cfg), "config_hash": self.config_hash},
        )
        logger.info("Resolved config %s written to %s", self.config_hash[:12], self.path("config.json"))

    def rules(self) -> RuleSet:
        return load_rules(self.cfg.synth.rules)


def _load_labelled(path: str, rules: RuleSet, what: str) -> Dataset:
    if not os.path.isfile(path):
        raise DataError(f"{what} dataset not found: {path}")
    dataset = load_dataset(path)
    if dataset.alphabet != rules.alphabet:
        raise ConfigError(
            f"{what} dataset alphabet {list(dataset.alphabet.names)} != rules alphabet "
            f"{list(rules.alphabet.names)}",
            field="synth.rules",
        )
    return dataset


def cmd_generate(ctx: RunContext) -> int:
    """Generate train/test datasets plus a manifest with predictor statistics."""
    synth = ctx.cfg.synth
    rules = ctx.rules()
    ctx.echo()
    train_set, test_set = generate_dataset(synth, rules)
    save_dataset(train_set, ctx.train_path)
    save_dataset(test_set, ctx.test_path)

    trajectories = train_set.trajectories + test_set.trajectories
    pred_v, pairs = violation_counts([t.pred for t in trajectories if t.pred is not None], rules)
    truth_v, _ = violation_counts([t.true for t in trajectories if t.true is not None], rules)
    steps = sum(t.T for t in trajectories)
    agree = sum(int((t.pred == t.true).sum()) for t in trajectories if t.pred is not None and t.true is not None)
    manifest = DatasetManifest(
        seed=synth.seed,
        alphabet=list(rules.alphabet.names),
        M=synth.M,
        n_train=len(train_set),
        n_test=len(test_set),
        predictor_accuracy=agree / steps,
        predictor_violation_rate=pred_v / pairs if pairs else 0.0,
        predictor_violations=pred_v,
        truth_violation_rate=truth_v / pairs if pairs else 0.0,
        pairs=pairs,
    )
    atomic_write_json(ctx.path("data", "manifest.json"), manifest.model_dump())

    print(f"✅ Generated {len(train_set)} train / {len(test_set)} test trajectories in {ctx.path('data')}")
    print(f"  - Predictor accuracy: {manifest.predictor_accuracy:.4f}")
    print(f"  - Predictor violation rate: {manifest.predictor_violation_rate:.4f}")
    return 0


def cmd_train(ctx: RunContext) -> int:
    """Train a rule layer; writes the checkpoint and the per-epoch stats table."""
    rules = ctx.rules()
    dataset = _load_labelled(ctx.train_path, rules, "training")
    ctx.echo()
    result = train(dataset, ctx.cfg.train, rules)
    save_checkpoint(
        Checkpoint(
            layer=result.layer,
            policy_adam=result.policy_adam,
            baseline_adam=result.baseline_adam,
            epochs_trained=len(result.stats),
            config_hash=ctx.config_hash,
        ),
        ctx.checkpoint_path,
    )
    write_stats(result.stats, ctx.path("stats", "stats.tsv"), ctx.metadata(ctx.cfg.train.seed))

    first, last = result.stats[0], result.stats[-1]
    print(f"✅ Trained {len(result.stats)} epochs; checkpoint at {ctx.checkpoint_path}")
    print(f"  - Mean return: {first.mean_return:.3f} -> {last.mean_return:.3f}")
    print(f"  - Violation rate: {first.violation_rate:.4f} -> {last.violation_rate:.4f}")
    return 0


def cmd_sweep(ctx: RunContext) -> int:
    """Train every grid cell over all sweep seeds; writes the manifest and summary."""
    rules = ctx.rules()
    dataset = _load_labelled(ctx.train_path, rules, "training")
    ctx.echo()
    metadata = {key: str(value) for key, value in ctx.metadata(ctx.cfg.train.seed).items()}
    sweep_dir = ctx.path("sweep")
    manifest_path = run_sweep(dataset, ctx.cfg.train, rules, sweep_dir, workers=ctx.workers, metadata=metadata)
    summaries = summarize_sweep(manifest_path)
    write_sweep_summary(summaries, os.path.join(sweep_dir, "summary.tsv"), metadata)
    print(f"✅ Swept {len(summaries)} cells; manifest at {manifest_path}")
    return 0


def cmd_eval(ctx: RunContext) -> int:
    """Greedy evaluation of a checkpoint on the test set; writes reports and the trace."""
    rules = ctx.rules()
    checkpoint = load_checkpoint(ctx.checkpoint_path)
    dataset = _load_labelled(ctx.test_path, rules, "test")
    checkpoint.layer.check_compatible(dataset.alphabet, dataset.M)
    ctx.echo()

    spec = RewardSpec(variant=ctx.cfg.train.reward_variant, rules=rules)
    evaluation = evaluate_dataset(checkpoint.layer, dataset, spec)
    report_dir = ctx.path("reports")
    write_report(
        evaluation, rules.alphabet.names, spec.variant, report_dir, ctx.metadata(ctx.cfg.train.seed)
    )
    write_trace(evaluation.episodes, os.path.join(report_dir, "trace.jsonl"))

    print(f"✅ Evaluated {len(dataset)} trajectories; reports in {report_dir}")
    print(f"  - Accuracy: {evaluation.pred_accuracy:.4f} -> {evaluation.corrected_accuracy:.4f}")
    print(f"  - Violation rate: {evaluation.pred_violation_rate:.4f} -> {evaluation.corrected_violation_rate:.4f}")
    return 0


def cmd_correct(ctx: RunContext) -> int:
    """Correct an input dataset; true labels are optional and only used for accuracy."""
    input_path = ctx.cfg.paths.input
    if not input_path:
        raise ConfigError("an input dataset is required (--input PATH)", field="paths.input")
    rules = ctx.rules()
    checkpoint = load_checkpoint(ctx.checkpoint_path)
    if not os.path.isfile(input_path):
        raise DataError(f"input dataset not found: {input_path}")
    dataset = load_dataset(input_path)
    checkpoint.layer.check_compatible(dataset.alphabet, dataset.M)
    if dataset.alphabet != rules.alphabet:
        raise ConfigError("input alphabet does not match the rules", field="synth.rules")
    ctx.echo()

    lines: List[str] = []
    corrected_seqs, pred_seqs = [], []
    correct = maintained = steps = 0
    for traj in dataset:
        if traj.pred is None:
            raise DataError(f"trajectory {traj.seq_id} has no predicted labels")
        corrected = checkpoint.layer.correct(traj)
        corrected_seqs.append(corrected)
        pred_seqs.append(traj.pred)
        for t in range(traj.T):
            record: Dict[str, Any] = {
                "seq_id": traj.seq_id, "t": t, "pred": int(traj.pred[t]), "corrected": int(corrected[t]),
            }
            if traj.true is not None:
                record["true"] = int(traj.true[t])
            lines.append(json.dumps(record))
        if traj.true is not None:
            correct += int((corrected == traj.true).sum())
            steps += traj.T
        maintained += int((corrected == traj.pred).sum())
    atomic_write_text(ctx.path("corrected", "labels.jsonl"), "".join(line + "\n" for line in lines))

    pred_v, pairs = violation_counts(pred_seqs, rules)
    corr_v, _ = violation_counts(corrected_seqs, rules)
    rows: List[Dict[str, Any]] = [
        {"metric": "violations", "predictor": pred_v, "corrected": corr_v},
        {"metric": "pairs", "predictor": pairs, "corrected": pairs},
        {
            "metric": "violation_rate",
            "predictor": pred_v / pairs if pairs else 0.0,
            "corrected": corr_v / pairs if pairs else 0.0,
        },
    ]
    if dataset.has_truth and steps:
        pred_correct = sum(int((t.pred == t.true).sum()) for t in dataset if t.pred is not None and t.true is not None)
        rows.append({"metric": "accuracy", "predictor": pred_correct / steps, "corrected": correct / steps})
    write_table(
        ctx.path("corrected", "violations.tsv"),
        ["metric", "predictor", "corrected"],
        rows,
        ctx.metadata(ctx.cfg.train.seed),
    )

    total = sum(len(seq) for seq in corrected_seqs)
    print(f"✅ Corrected {len(dataset)} trajectories ({total - maintained} labels reassigned)")
    print(f"  - Violations: {pred_v} -> {corr_v} of {pairs} pairs")
    return 0


HANDLERS: Dict[str, Callable[[RunContext], int]] = {
    "generate": cmd_generate,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "correct": cmd_correct,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rule-layer", description="Rule-based RL correction layer.")
    subparsers = parser.add_subparsers(dest="command", help="Command to execute")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--profile", choices=["sleep", "seizure"], help="Builtin profile supplying defaults")
    common.add_argument("--seed", type=int, help="Seed for both generation and training")
    common.add_argument("--rules", help="Builtin rule set name or rules file")
    common.add_argument("--out", help="Output directory (default: $RULE_LAYER_OUTPUT_ROOT/<command>)")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config field, e.g. train.alpha=0.1 (repeatable)",
    )

    subparsers.add_parser("generate", parents=[common], help="Generate synthetic datasets")
    subparsers.add_parser("train", parents=[common], help="Train a rule layer")
    sweep_parser = subparsers.add_parser("sweep", parents=[common], help="Run the hyperparameter sweep")
    sweep_parser.add_argument("--workers", type=int, default=1, help="Worker processes")
    subparsers.add_parser("eval", parents=[common], help="Evaluate a checkpoint on the test dataset")
    correct_parser = subparsers.add_parser("correct", parents=[common], help="Correct an input dataset")
    correct_parser.add_argument("--input", help="Dataset whose labels should be corrected")
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    flags: Dict[str, Any] = {}
    if args.seed is not None:
        flags.setdefault("synth", {})["seed"] = args.seed
        flags.setdefault("train", {})["seed"] = args.seed
    if args.rules is not None:
        flags.setdefault("synth", {})["rules"] = args.rules
    if args.out is not None:
        flags.setdefault("paths", {})["out_dir"] = args.out
    if getattr(args, "input", None) is not None:
        flags.setdefault("paths", {})["input"] = args.input
    return flags


def configure_logging() -> None:
    level = os.getenv("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def run(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, run one command and map errors to exit codes.

    Returns:
        int: Process exit code
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return 2

    try:
        workers = getattr(args, "workers", 1)
        if workers < 1:
            raise ConfigError("must be at least 1", field="--workers")
        cfg = resolve_config(args.profile, args.config, args.overrides, _flags(args))
        return HANDLERS[args.command](RunContext(args.command, cfg, workers=workers))
    except RuleLayerError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"❌ I/O error: {e}", file=sys.stderr)
        return 3
