"""
Correction MDP: states, the two reward variants and episode rollout.

A state packs [onehot(y-hat_t), z_t, onehot(a_{t-1})] into one 2K + M vector.
Transitions replay the dataset, so an episode is one trajectory walked from t = 0
to T - 1. The previous action before the first step is the predictor's first label.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.errors import DataError, DatasetLoadError, DomainError
from app.core.label_rules import RuleSet
from app.core.schema import RewardVariant
from app.core.utils.files import atomic_write_text
from app.core.utils.validation import check_finite, check_length
from app.data.dataset import Instance, Trajectory

logger = logging.getLogger(__name__)


class RewardCategory(str, Enum):
    """Reward cases of both variants; the value is the name written to traces and reports."""

    MAINTAIN_CORRECT = "maintain_correct"
    REASSIGN_CORRECT = "reassign_correct"
    KEEP_WRONG = "keep_wrong"
    REASSIGN_WRONG_POSSIBLE_PRED_WRONG = "reassign_wrong_possible_pred_wrong"
    REASSIGN_WRONG_POSSIBLE_PRED_RIGHT = "reassign_wrong_possible_pred_right"
    REASSIGN_WRONG_IMPOSSIBLE = "reassign_wrong_impossible"
    UNCOVERED = "uncovered"
    WRONG_POSSIBLE = "wrong_possible"
    WRONG_IMPOSSIBLE = "wrong_impossible"

    @property
    def reward(self) -> int:
        return CATEGORY_REWARDS[self]


CATEGORY_REWARDS: Dict[RewardCategory, int] = {
    RewardCategory.MAINTAIN_CORRECT: 0,
    RewardCategory.REASSIGN_CORRECT: 1,
    RewardCategory.KEEP_WRONG: -1,
    RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_WRONG: -2,
    RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_RIGHT: -3,
    RewardCategory.REASSIGN_WRONG_IMPOSSIBLE: -4,
    RewardCategory.UNCOVERED: -4,
    RewardCategory.WRONG_POSSIBLE: -1,
    RewardCategory.WRONG_IMPOSSIBLE: -2,
}

VARIANT_CATEGORIES: Dict[str, Tuple[RewardCategory, ...]] = {
    "full": (
        RewardCategory.MAINTAIN_CORRECT,
        RewardCategory.REASSIGN_CORRECT,
        RewardCategory.KEEP_WRONG,
        RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_WRONG,
        RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_RIGHT,
        RewardCategory.REASSIGN_WRONG_IMPOSSIBLE,
        RewardCategory.UNCOVERED,
    ),
    "simplified": (
        RewardCategory.MAINTAIN_CORRECT,
        RewardCategory.REASSIGN_CORRECT,
        RewardCategory.WRONG_POSSIBLE,
        RewardCategory.WRONG_IMPOSSIBLE,
    ),
}


@dataclass(frozen=True, eq=False)
class State:
    """Packed state vector with its block layout."""

    vector: np.ndarray
    K: int
    M: int

    @property
    def dim(self) -> int:
        return 2 * self.K + self.M

    @property
    def pred_onehot(self) -> np.ndarray:
        return self.vector[: self.K]

    @property
    def features(self) -> np.ndarray:
        return self.vector[self.K: self.K + self.M]

    @property
    def prev_action_onehot(self) -> np.ndarray:
        return self.vector[self.K + self.M:]

    @property
    def pred_label(self) -> int:
        return int(np.argmax(self.pred_onehot))

    @property
    def prev_action(self) -> int:
        return int(np.argmax(self.prev_action_onehot))


def state_dim(K: int, M: int) -> int:
    return 2 * K + M


def build_state(instance: Instance, prev_action: int, K: int, M: int) -> State:
    """
    Pack an instance and the previous action into a state.

    Args:
        instance: Features and predicted label of the current step
        prev_action: Action chosen at the previous step (y-hat_0 at t = 0)
        K: Number of labels
        M: Feature dimension

    Returns:
        State: Read-only packed vector of length 2K + M

    Raises:
        DomainError: On a label outside [0, K) or a feature vector of the wrong length
    """
    for name, label in (("predicted label", instance.pred_label), ("previous action", prev_action)):
        if not 0 <= label < K:
            raise DomainError(f"{name} {label} out of range [0, {K})")
    features = check_length(np.asarray(instance.features, dtype=np.float64), M, "features")
    check_finite(features, "features")

    vector = np.zeros(2 * K + M, dtype=np.float64)
    vector[instance.pred_label] = 1.0
    vector[K: K + M] = features
    vector[K + M + prev_action] = 1.0
    vector.setflags(write=False)
    return State(vector=vector, K=K, M=M)


def unpack_state(vector: np.ndarray, K: int, M: int) -> State:
    """
    Wrap a packed vector as a State after checking its layout.

    Raises:
        DomainError: If the length is not 2K + M or a one-hot block is malformed
    """
    vector = check_length(np.asarray(vector, dtype=np.float64), 2 * K + M, "state")
    for name, block in (("predicted label", vector[:K]), ("previous action", vector[K + M:])):
        if np.count_nonzero(block) != 1 or block.sum() != 1.0:
            raise DomainError(f"{name} block is not one-hot: {block.tolist()}")
    vector = vector.copy()
    vector.setflags(write=False)
    return State(vector=vector, K=K, M=M)


def _check_labels(rules: RuleSet, *labels: int) -> None:
    for label in labels:
        rules.alphabet.check(label)


def classify_step(
    y: int, y_hat: int, a: int, a_prev: int, rules: RuleSet, variant: RewardVariant = "full"
) -> RewardCategory:
    """
    Classify one step into its reward case.

    Full variant: keeping a wrong prediction is -1 whether or not it is reachable;
    a wrong reassignment costs -2/-3 when reachable and -4 when not. A wrong
    unreachable reassignment of a correct prediction is the `uncovered` case,
    also -4. Correct actions are never penalized for reachability.

    Raises:
        DomainError: If any label is not a valid index
    """
    _check_labels(rules, y, y_hat, a, a_prev)
    if a == y:
        return RewardCategory.MAINTAIN_CORRECT if y == y_hat else RewardCategory.REASSIGN_CORRECT

    reachable = rules.is_reachable(a_prev, a)
    if variant == "simplified":
        return RewardCategory.WRONG_POSSIBLE if reachable else RewardCategory.WRONG_IMPOSSIBLE
    if variant != "full":
        raise DomainError(f"unknown reward variant {variant!r}")

    if a == y_hat:
        return RewardCategory.KEEP_WRONG
    if reachable:
        if y != y_hat:
            return RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_WRONG
        return RewardCategory.REASSIGN_WRONG_POSSIBLE_PRED_RIGHT
    if y != y_hat:
        return RewardCategory.REASSIGN_WRONG_IMPOSSIBLE
    return RewardCategory.UNCOVERED


def reward_full(y: int, y_hat: int, a: int, a_prev: int, rules: RuleSet) -> int:
    return classify_step(y, y_hat, a, a_prev, rules, "full").reward


def reward_simplified(y: int, y_hat: int, a: int, a_prev: int, rules: RuleSet) -> int:
    return classify_step(y, y_hat, a, a_prev, rules, "simplified").reward


@dataclass(frozen=True)
class RewardSpec:
    """Reward variant, rule set and discount (always 1)."""

    variant: RewardVariant
    rules: RuleSet
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANT_CATEGORIES:
            raise DomainError(f"unknown reward variant {self.variant!r}")
        if self.gamma != 1.0:
            raise DomainError(f"gamma is fixed to 1, got {self.gamma}")

    @property
    def categories(self) -> Tuple[RewardCategory, ...]:
        return VARIANT_CATEGORIES[self.variant]

    @property
    def min_reward(self) -> int:
        return min(category.reward for category in self.categories)

    def classify(self, y: int, y_hat: int, a: int, a_prev: int) -> RewardCategory:
        return classify_step(y, y_hat, a, a_prev, self.rules, self.variant)


@dataclass(frozen=True)
class StepRecord:
    t: int
    state: State
    action: int
    prev_action: int
    pred_label: int
    true_label: int
    reward: int
    category: RewardCategory


ActionSelector = Callable[[State], int]


class CorrectionEnv:
    """
    Replays one trajectory as an episode.

    `reset()` returns the first state; `step(action)` scores the action, moves to the
    next instance and returns (next_state, reward, done, record).
    """

    def __init__(self, traj: Trajectory, spec: RewardSpec):
        if traj.features is None or traj.pred is None:
            raise DataError(f"trajectory {traj.seq_id} has no features or predictions")
        if traj.true is None:
            raise DataError(f"trajectory {traj.seq_id} has no true labels to compute rewards")
        self.traj = traj
        self.spec = spec
        self.K = spec.rules.K
        self.M = traj.M
        self.t = 0
        self.prev_action = int(traj.pred[0])
        self.state: Optional[State] = None

    def reset(self) -> State:
        self.t = 0
        self.prev_action = int(self.traj.pred[0])
        self.state = build_state(self.traj.instance(0), self.prev_action, self.K, self.M)
        return self.state

    def step(self, action: int) -> Tuple[Optional[State], int, bool, StepRecord]:
        if self.state is None:
            raise DomainError("reset() must be called before step()")
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise DomainError(f"selector returned a non-integer action {action!r}")
        if not 0 <= action < self.K:
            raise DomainError(f"selector returned action {action} outside [0, {self.K})")
        action = int(action)

        instance = self.traj.instance(self.t)
        category = self.spec.classify(instance.true_label, instance.pred_label, action, self.prev_action)
        record = StepRecord(
            t=self.t,
            state=self.state,
            action=action,
            prev_action=self.prev_action,
            pred_label=instance.pred_label,
            true_label=instance.true_label,
            reward=category.reward,
            category=category,
        )

        self.t += 1
        self.prev_action = action
        done = self.t >= self.traj.T
        self.state = None if done else build_state(self.traj.instance(self.t), action, self.K, self.M)
        return self.state, record.reward, done, record


def run_episode(traj: Trajectory, selector: ActionSelector, spec: RewardSpec) -> List[StepRecord]:
    """
    Roll out one trajectory with an action selector.

    Args:
        traj: Trajectory with features, predictions and true labels
        selector: Maps a state to a label
        spec: Reward specification

    Returns:
        List[StepRecord]: One record per step; the return is the sum of rewards

    Raises:
        DomainError: If the selector returns an invalid label
        DataError: If the trajectory lacks true labels
    """
    env = CorrectionEnv(traj, spec)
    state: Optional[State] = env.reset()
    records = []
    done = False
    while not done:
        assert state is not None
        state, _, done, record = env.step(selector(state))
        records.append(record)
    return records


def episode_return(records: Sequence[StepRecord]) -> int:
    return int(sum(record.reward for record in records))


class TraceEntry(BaseModel):
    """One line of a correction trace."""
    model_config = ConfigDict(extra="forbid", strict=True)

    seq_id: str = Field(..., description="Sequence identifier")
    t: int = Field(..., description="0-based step", ge=0)
    pred: int = Field(..., description="Predicted label")
    action: int = Field(..., description="Label chosen by the rule layer")
    true: int = Field(..., description="True label")
    reward: int = Field(..., description="Step reward")
    category: RewardCategory = Field(..., description="Reward case")


def trace_entries(seq_id: str, records: Iterable[StepRecord]) -> List[TraceEntry]:
    return [
        TraceEntry(
            seq_id=seq_id, t=r.t, pred=r.pred_label, action=r.action,
            true=r.true_label, reward=r.reward, category=r.category,
        )
        for r in records
    ]


def write_trace(episodes: Iterable[Tuple[str, Sequence[StepRecord]]], path: str) -> int:
    """
    Write episodes as a line-delimited trace.

    Args:
        episodes: (seq_id, records) pairs in output order
        path: Destination file

    Returns:
        int: Number of lines written
    """
    lines = []
    for seq_id, records in episodes:
        for entry in trace_entries(seq_id, records):
            lines.append(json.dumps(entry.model_dump(mode="json")))
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    logger.debug("Wrote %d trace lines to %s", len(lines), path)
    return len(lines)


def read_trace(path: str) -> List[TraceEntry]:
    """
    Read a trace file written by `write_trace`.

    Raises:
        DatasetLoadError: If a line is not a valid trace entry
    """
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                entries.append(TraceEntry.model_validate(json.loads(line), strict=False))
            except (json.JSONDecodeError, ValidationError) as e:
                raise DatasetLoadError(f"{path} line {line_no}", f"invalid trace entry: {e}")
    return entries
