"""
Policy-gradient training of the rule layer.

Each trajectory is rolled out with epsilon-greedy sampling from the current policy.
The baseline regresses the undiscounted returns-to-go; the policy minimizes

    sum_t [-(G_t - b(s_t)) + alpha * 1{a_t != a_{t-1}}] * log pi(a_t | s_t)

with the baseline values held constant. By default G_t - b(s_t) is centred within each
episode before the switch penalty is added. Both networks are updated with Adam at the
learning rate of the current epoch.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DataError, TrainingError
from app.core.label_rules import RuleSet
from app.core.mdp_env import RewardSpec, StepRecord, build_state, episode_return, run_episode
from app.core.neural import (
    AdamState,
    ExponentialLR,
    MlpParams,
    adam_step,
    baseline_backward,
    baseline_forward,
    policy_backward,
    policy_forward,
)
from app.core.rule_layer import RuleLayer
from app.core.schema import TrainConfig
from app.data.dataset import Dataset, Trajectory, segment
from app.metrics.metrics import (
    CategoryCounts,
    correct_breakdown,
    reward_category_counts,
    violation_counts,
)

logger = logging.getLogger(__name__)


def returns_to_go(rewards: Sequence[float]) -> np.ndarray:
    """Undiscounted suffix sums G_t = r_t + r_{t+1} + ... + r_{T-1}."""
    values = np.asarray(rewards, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise DataError("returns need a non-empty reward sequence")
    return np.cumsum(values[::-1])[::-1].copy()


def switch_indicators(records: Sequence[StepRecord]) -> np.ndarray:
    """1 where the sampled action differs from the previous one (y-hat_0 before the first step)."""
    return np.array([float(r.action != r.prev_action) for r in records], dtype=np.float64)


def policy_objective_coeffs(
    records: Sequence[StepRecord], baseline_values: np.ndarray, alpha: float, center: bool = False
) -> np.ndarray:
    """
    Per-step coefficients on log pi(a_t | s_t) of the policy loss.

    Args:
        records: Steps of one episode
        baseline_values: b(s_t) for the same steps, treated as constants
        alpha: Switch-penalty weight
        center: Subtract the episode mean of G_t - b(s_t) before adding the penalty

    Returns:
        np.ndarray: coefficient_t = -(G_t - b(s_t)) + alpha * 1{a_t != a_{t-1}}
    """
    baseline_values = np.asarray(baseline_values, dtype=np.float64).reshape(-1)
    if baseline_values.shape[0] != len(records):
        raise DataError(f"{len(records)} steps but {baseline_values.shape[0]} baseline values")
    advantages = returns_to_go([r.reward for r in records]) - baseline_values
    if center:
        # undiscounted returns scale with the remaining horizon, which the state does not see
        advantages = advantages - advantages.mean()
    return -advantages + alpha * switch_indicators(records)


def baseline_objective(records: Sequence[StepRecord], baseline: MlpParams) -> Tuple[float, MlpParams]:
    """Squared error sum_t (b(s_t) - G_t)^2 and its gradients with respect to the baseline."""
    states = np.stack([r.state.vector for r in records])
    _, cache = baseline_forward(baseline, states)
    return baseline_backward(baseline, cache, returns_to_go([r.reward for r in records]))


@dataclass
class EpochStats:
    """Aggregates of one training epoch; losses are means per trajectory."""

    epoch: int
    mean_return: float
    accuracy: float
    violation_rate: float
    policy_loss: float
    baseline_loss: float
    penalty_term: float
    lr: float
    categories: CategoryCounts = field(default_factory=CategoryCounts)

    def as_row(self) -> Dict[str, float]:
        return {
            "epoch": self.epoch,
            "mean_return": self.mean_return,
            "accuracy": self.accuracy,
            "violation_rate": self.violation_rate,
            "policy_loss": self.policy_loss,
            "baseline_loss": self.baseline_loss,
            "penalty_term": self.penalty_term,
            "lr": self.lr,
        }


@dataclass
class _Update:
    policy_grads: MlpParams
    baseline_grads: MlpParams
    policy_loss: float
    baseline_loss: float
    penalty_term: float


class Trainer:
    """
    Owns a rule layer, its optimizer states and the sampling stream of one run.

    Training is strictly sequential: every episode is sampled from the policy
    produced by the previous update.
    """

    def __init__(
        self,
        layer: RuleLayer,
        cfg: TrainConfig,
        rules: RuleSet,
        rng: np.random.Generator,
        policy_adam: Optional[AdamState] = None,
        baseline_adam: Optional[AdamState] = None,
        epochs_trained: int = 0,
    ):
        if rules.alphabet != layer.alphabet:
            raise DataError("rule set alphabet does not match the rule layer")
        self.layer = layer
        self.cfg = cfg
        self.spec = RewardSpec(variant=cfg.reward_variant, rules=rules)
        self.rng = rng
        self.schedule = ExponentialLR(initial=cfg.lr, gamma=cfg.lr_decay)
        self.policy_adam = policy_adam or AdamState.zeros(
            layer.policy, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        )
        self.baseline_adam = baseline_adam or AdamState.zeros(
            layer.baseline, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        )
        self.epochs_trained = epochs_trained

    def warm_start(self, trajectories: Sequence[Trajectory], epochs: int) -> None:
        """
        Supervised passes maximizing log pi(y-hat_t | s_t) along the predictor's own
        label sequence, so training starts from a policy that maintains predictions.
        Uses a throwaway Adam state at the initial learning rate.
        """
        if epochs <= 0:
            return
        adam = AdamState.zeros(self.layer.policy, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        K, M = self.layer.K, self.layer.M
        for epoch in range(epochs):
            total = 0.0
            for i in self.rng.permutation(len(trajectories)):
                traj = trajectories[i]
                assert traj.pred is not None
                prev = np.concatenate([traj.pred[:1], traj.pred[:-1]])
                states = np.stack([build_state(traj.instance(t), int(prev[t]), K, M).vector for t in range(traj.T)])
                _, cache = policy_forward(self.layer.policy, states, self.layer.eta)
                log_probs = cache.log_probs[np.arange(traj.T), traj.pred]
                total -= float(np.sum(log_probs))
                grads = policy_backward(self.layer.policy, cache, traj.pred, -np.ones(traj.T))
                self.layer.policy = self._adam(self.layer.policy, grads, adam, self.cfg.lr, traj.seq_id)
            logger.info("Warm start %d/%d: mean imitation loss %.4f", epoch + 1, epochs, total / len(trajectories))

    def _episode_update(self, traj: Trajectory, records: List[StepRecord]) -> _Update:
        states = np.stack([r.state.vector for r in records])
        actions = np.array([r.action for r in records], dtype=np.int64)

        values, _ = baseline_forward(self.layer.baseline, states)
        baseline_loss, baseline_grads = baseline_objective(records, self.layer.baseline)

        switches = switch_indicators(records)
        coeffs = policy_objective_coeffs(records, values, self.cfg.alpha, center=self.cfg.center_advantages)
        _, policy_cache = policy_forward(self.layer.policy, states, self.layer.eta)
        log_probs = policy_cache.log_probs[np.arange(len(records)), actions]
        penalty = float(self.cfg.alpha * np.sum(switches * log_probs))
        policy_loss = float(np.sum(coeffs * log_probs))
        if not np.isfinite(policy_loss) or not np.isfinite(baseline_loss):
            raise TrainingError(
                f"non-finite loss on trajectory {traj.seq_id} "
                f"(policy={policy_loss}, baseline={baseline_loss})"
            )
        policy_grads = policy_backward(self.layer.policy, policy_cache, actions, coeffs)
        return _Update(
            policy_grads=policy_grads,
            baseline_grads=baseline_grads,
            policy_loss=policy_loss - penalty,
            baseline_loss=baseline_loss,
            penalty_term=penalty,
        )

    def _adam(self, params: MlpParams, grads: MlpParams, state: AdamState, lr: float, where: str) -> MlpParams:
        try:
            updated = adam_step(params, grads, state, lr)
        except TrainingError as e:
            raise TrainingError(f"{e} on {where}")
        if not updated.is_finite():
            raise TrainingError(f"parameters became non-finite on {where}")
        return updated

    def _apply(self, update: _Update, lr: float, where: str) -> None:
        # baseline first; the policy coefficients already used the pre-update values
        self.layer.baseline = self._adam(self.layer.baseline, update.baseline_grads, self.baseline_adam, lr, where)
        self.layer.policy = self._adam(self.layer.policy, update.policy_grads, self.policy_adam, lr, where)

    def train_epoch(self, trajectories: Sequence[Trajectory]) -> EpochStats:
        """
        One pass over the trajectories in a seeded shuffled order.

        Raises:
            DataError: If there are no trajectories or one lacks true labels
            TrainingError: On a non-finite loss, gradient or parameter
        """
        if not trajectories:
            raise DataError("cannot train on an empty dataset")
        epoch = self.epochs_trained
        lr = self.schedule.rate(epoch)
        selector = self.layer.selector(self.cfg.epsilon, self.rng)

        returns, categories = [], CategoryCounts.empty(self.cfg.reward_variant)
        actions_seqs: List[np.ndarray] = []
        correct = steps = 0
        policy_loss = baseline_loss = penalty = 0.0
        pending: Optional[_Update] = None

        for i in self.rng.permutation(len(trajectories)):
            traj = trajectories[i]
            records = run_episode(traj, selector, self.spec)
            update = self._episode_update(traj, records)

            if self.cfg.update_mode == "trajectory":
                self._apply(update, lr, f"trajectory {traj.seq_id}")
            elif pending is None:
                pending = update
            else:
                pending = _Update(
                    policy_grads=pending.policy_grads.add(update.policy_grads),
                    baseline_grads=pending.baseline_grads.add(update.baseline_grads),
                    policy_loss=0.0, baseline_loss=0.0, penalty_term=0.0,
                )

            actions = np.array([r.action for r in records], dtype=np.int64)
            actions_seqs.append(actions)
            returns.append(episode_return(records))
            categories = categories.merge(reward_category_counts(records))
            correct += int(np.count_nonzero(actions == np.array([r.true_label for r in records])))
            steps += len(records)
            policy_loss += update.policy_loss
            baseline_loss += update.baseline_loss
            penalty += update.penalty_term

        if pending is not None:
            self._apply(pending, lr, f"epoch {epoch}")

        violations, pairs = violation_counts(actions_seqs, self.spec.rules)
        n = len(trajectories)
        stats = EpochStats(
            epoch=epoch,
            mean_return=float(np.mean(returns)),
            accuracy=correct / steps,
            violation_rate=violations / pairs if pairs else 0.0,
            policy_loss=policy_loss / n,
            baseline_loss=baseline_loss / n,
            penalty_term=penalty / n,
            lr=lr,
            categories=categories,
        )
        self.epochs_trained += 1
        logger.info(
            "Epoch %d: mean return %.3f, accuracy %.4f, violation rate %.4f, lr %.3g",
            epoch, stats.mean_return, stats.accuracy, stats.violation_rate, lr,
        )
        return stats


@dataclass
class TrainResult:
    layer: RuleLayer
    policy_adam: AdamState
    baseline_adam: AdamState
    stats: List[EpochStats]


def train(dataset: Dataset, cfg: TrainConfig, rules: RuleSet) -> TrainResult:
    """
    Train a fresh rule layer on a dataset.

    Args:
        dataset: Training trajectories with features, predictions and true labels
        cfg: Training configuration; cfg.seed drives initialization and sampling
        rules: Rule set defining the reward

    Returns:
        TrainResult: Trained layer, optimizer states and one EpochStats per epoch

    Raises:
        DataError: If the dataset is empty, unlabelled or does not match the rules
        TrainingError: If training diverges
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if not dataset.has_truth:
        raise DataError("training needs true labels on every trajectory")
    if dataset.alphabet != rules.alphabet:
        raise DataError(
            f"dataset alphabet {list(dataset.alphabet.names)} != rules alphabet {list(rules.alphabet.names)}"
        )

    init_seed, sample_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    layer = RuleLayer.create(dataset.alphabet, dataset.M, cfg, seed=init_seed)
    trainer = Trainer(layer, cfg, rules, np.random.default_rng(sample_seed))

    trajectories = list(dataset) if cfg.max_T is None else segment(list(dataset), cfg.max_T)
    trainer.warm_start(trajectories, cfg.maintain_warmup_epochs)
    stats = [trainer.train_epoch(trajectories) for _ in range(cfg.epochs)]
    return TrainResult(
        layer=trainer.layer, policy_adam=trainer.policy_adam, baseline_adam=trainer.baseline_adam, stats=stats
    )


@dataclass
class Evaluation:
    """Greedy evaluation of a rule layer on a labelled dataset."""

    episodes: List[Tuple[str, List[StepRecord]]]
    corrected: Dict[str, np.ndarray]
    mean_return: float
    categories: CategoryCounts
    true: np.ndarray
    pred: np.ndarray
    assigned: np.ndarray
    pred_violations: Tuple[int, int]
    corrected_violations: Tuple[int, int]

    @property
    def pred_accuracy(self) -> float:
        return float(np.mean(self.pred == self.true))

    @property
    def corrected_accuracy(self) -> float:
        return float(np.mean(self.assigned == self.true))

    @property
    def pred_violation_rate(self) -> float:
        v, p = self.pred_violations
        return v / p if p else 0.0

    @property
    def corrected_violation_rate(self) -> float:
        v, p = self.corrected_violations
        return v / p if p else 0.0

    @property
    def maintained_correct(self) -> int:
        return correct_breakdown(self.true, self.pred, self.assigned).maintained

    @property
    def reassigned_correct(self) -> int:
        return correct_breakdown(self.true, self.pred, self.assigned).reassigned


def evaluate_dataset(layer: RuleLayer, dataset: Dataset, spec: RewardSpec) -> Evaluation:
    """
    Run greedy episodes over every trajectory of a labelled dataset.

    Raises:
        ConfigError: If the dataset does not fit the layer
        DataError: If the dataset is empty or lacks true labels
    """
    layer.check_compatible(dataset.alphabet, dataset.M)
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    if not dataset.has_truth:
        raise DataError("evaluation needs true labels on every trajectory")

    episodes, corrected = [], {}
    categories = CategoryCounts.empty(spec.variant)
    for traj in dataset:
        records = layer.evaluate(traj, spec)
        episodes.append((traj.seq_id, records))
        corrected[traj.seq_id] = np.array([r.action for r in records], dtype=np.int64)
        categories = categories.merge(reward_category_counts(records))

    trajectories = list(dataset)
    return Evaluation(
        episodes=episodes,
        corrected=corrected,
        mean_return=float(np.mean([episode_return(records) for _, records in episodes])),
        categories=categories,
        true=np.concatenate([t.true for t in trajectories if t.true is not None]),
        pred=np.concatenate([t.pred for t in trajectories if t.pred is not None]),
        assigned=np.concatenate(list(corrected.values())),
        pred_violations=violation_counts([t.pred for t in trajectories if t.pred is not None], spec.rules),
        corrected_violations=violation_counts(corrected.values(), spec.rules),
    )
