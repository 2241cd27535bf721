"""
The deployable correction layer.

A RuleLayer sits on top of a frozen base predictor: it reads the predicted label,
the feature vector and its own previous output, and emits a (possibly reassigned)
label. Inference is greedy, so a trained layer is a deterministic function of its
input sequence.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.core.errors import ConfigError, DataError
from app.core.label_rules import LabelAlphabet
from app.core.mdp_env import ActionSelector, RewardSpec, State, StepRecord, build_state, run_episode
from app.core.neural import (
    MlpParams,
    baseline_dims,
    baseline_forward,
    greedy_action,
    init_params,
    policy_dims,
    policy_forward,
    sample_action,
)
from app.core.schema import TrainConfig
from app.data.dataset import Trajectory

logger = logging.getLogger(__name__)


@dataclass
class RuleLayer:
    """Policy and baseline networks bound to one alphabet and feature dimension."""

    alphabet: LabelAlphabet
    M: int
    eta: float
    policy: MlpParams
    baseline: MlpParams

    def __post_init__(self) -> None:
        D = 2 * self.alphabet.K + self.M
        if self.policy.dims[0] != D or self.policy.dims[-1] != self.alphabet.K:
            raise ConfigError(
                f"policy dims {self.policy.dims} do not fit K={self.alphabet.K}, M={self.M}", field="policy"
            )
        if self.baseline.dims[0] != D or self.baseline.dims[-1] != 1:
            raise ConfigError(
                f"baseline dims {self.baseline.dims} do not fit K={self.alphabet.K}, M={self.M}", field="baseline"
            )
        if not self.eta > 0.0:
            raise ConfigError(f"temperature must be positive, got {self.eta}", field="eta")

    @classmethod
    def create(
        cls, alphabet: LabelAlphabet, M: int, cfg: TrainConfig, seed: Optional[np.random.SeedSequence] = None
    ) -> "RuleLayer":
        """Freshly initialized networks sized from the training configuration, seeded by `seed` or cfg.seed."""
        root = seed if seed is not None else np.random.SeedSequence(cfg.seed)
        policy_seed, baseline_seed = root.spawn(2)
        K = alphabet.K
        return cls(
            alphabet=alphabet,
            M=M,
            eta=cfg.eta,
            policy=init_params(
                policy_dims(K, M, cfg.policy_hidden, cfg.hidden_layers), np.random.default_rng(policy_seed)
            ),
            baseline=init_params(
                baseline_dims(K, M, cfg.baseline_hidden, cfg.hidden_layers), np.random.default_rng(baseline_seed)
            ),
        )

    @property
    def K(self) -> int:
        return self.alphabet.K

    @property
    def state_dim(self) -> int:
        return 2 * self.K + self.M

    def probs(self, state: State) -> np.ndarray:
        probs, _ = policy_forward(self.policy, state.vector, self.eta)
        return probs

    def value(self, state: State) -> float:
        value, _ = baseline_forward(self.baseline, state.vector)
        return float(value)

    def act(self, state: State) -> int:
        """Greedy action for one state."""
        return greedy_action(self.probs(state))

    def selector(self, epsilon: float = 0.0, rng: Optional[np.random.Generator] = None) -> ActionSelector:
        """
        Action selector for `run_episode`.

        Without an rng the selector is greedy; with one it samples epsilon-greedily.
        """
        if rng is None:
            return self.act

        def _sample(state: State) -> int:
            return sample_action(self.probs(state), epsilon, rng)

        return _sample

    def check_compatible(self, alphabet: LabelAlphabet, M: int) -> None:
        """
        Raises:
            ConfigError: If a dataset's alphabet or feature dimension differs from the layer's
        """
        if alphabet != self.alphabet:
            raise ConfigError(
                f"dataset alphabet {list(alphabet.names)} != layer alphabet {list(self.alphabet.names)}",
                field="alphabet",
            )
        if M != self.M:
            raise ConfigError(f"dataset M={M} != layer M={self.M}", field="M")

    def correct(self, traj: Trajectory) -> np.ndarray:
        """
        Greedy rollout producing corrected labels; true labels are not needed.

        Raises:
            DataError: If the trajectory has no features or predictions
        """
        if traj.features is None or traj.pred is None:
            raise DataError(f"trajectory {traj.seq_id} has no features or predictions to correct")
        corrected = np.empty(traj.T, dtype=np.int64)
        prev = int(traj.pred[0])
        for t in range(traj.T):
            state = build_state(traj.instance(t), prev, self.K, self.M)
            prev = self.act(state)
            corrected[t] = prev
        return corrected

    def evaluate(self, traj: Trajectory, spec: RewardSpec) -> List[StepRecord]:
        """Greedy episode with rewards; needs true labels."""
        return run_episode(traj, self.act, spec)
