"""
Synthetic stage process and simulated base predictor.

The stage process is a rule-respecting Markov chain; the simulated predictor copies
the true label with probability 1 - predictor_error and otherwise mislabels, with a
bias towards labels that create a rule violation. Features are class prototypes of
the TRUE label plus Gaussian noise, so they carry correct-class signal even when the
predicted label is wrong.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, Field

from app.core.errors import DomainError, GenerationError
from app.core.label_rules import RuleSet
from app.core.schema import SynthConfig
from app.data.dataset import Dataset, Trajectory

logger = logging.getLogger(__name__)

MAX_PROTOTYPE_DOT = 0.5
MAX_PROTOTYPE_DRAWS = 10_000


@dataclass(frozen=True)
class _Streams:
    truth: np.random.Generator
    prototypes: np.random.Generator
    predictor: np.random.Generator


def _streams(seed: int) -> _Streams:
    truth, prototypes, predictor = np.random.SeedSequence(seed).spawn(3)
    return _Streams(
        truth=np.random.default_rng(truth),
        prototypes=np.random.default_rng(prototypes),
        predictor=np.random.default_rng(predictor),
    )


class DatasetManifest(BaseModel):
    """Summary written next to generated datasets."""
    seed: int = Field(..., description="Generation seed")
    alphabet: List[str] = Field(..., description="Label names")
    M: int = Field(..., description="Feature dimension")
    n_train: int = Field(..., description="Training trajectories")
    n_test: int = Field(..., description="Test trajectories")
    predictor_accuracy: float = Field(..., description="Fraction of steps with pred == true")
    predictor_violation_rate: float = Field(..., description="Violation rate of predicted label sequences")
    predictor_violations: int = Field(..., description="Violating consecutive predicted pairs")
    truth_violation_rate: float = Field(..., description="Violation rate of true label sequences")
    pairs: int = Field(..., description="Consecutive pairs scored")


def _successors(rules: RuleSet) -> List[np.ndarray]:
    reach = rules.reachability_matrix()
    return [np.array([b for b in np.flatnonzero(reach[a]) if b != a], dtype=np.int64) for a in range(rules.K)]


def generate_truth(cfg: SynthConfig, rules: RuleSet) -> List[Trajectory]:
    """
    Generate true-label trajectories from the rule-respecting stage process.

    With probability `stay_prob` the stage persists; otherwise a uniformly random
    reachable non-self successor is drawn. Labels without such a successor are
    absorbing and persist.

    Args:
        cfg: Synthetic data configuration; n_train + n_test trajectories of length T
        rules: Rule set constraining the transitions

    Returns:
        List of truth-only trajectories with ids s00000, s00001, ...

    Raises:
        GenerationError: If stay_prob < 1 but no label can move at all, or the
            initial label is unknown
    """
    successors = _successors(rules)
    if cfg.stay_prob < 1.0 and all(s.size == 0 for s in successors):
        raise GenerationError("no label has a reachable successor, the chain cannot leave its initial stage")

    initial = None
    if cfg.initial_label is not None:
        try:
            initial = rules.alphabet.index(cfg.initial_label)
        except DomainError as e:
            raise GenerationError(f"initial_label: {e}")

    rng = _streams(cfg.seed).truth
    trajectories = []
    for n in range(cfg.n_train + cfg.n_test):
        labels = np.empty(cfg.T, dtype=np.int64)
        labels[0] = initial if initial is not None else rng.integers(rules.K)
        for t in range(1, cfg.T):
            current = labels[t - 1]
            options = successors[current]
            if rng.random() < cfg.stay_prob or options.size == 0:
                labels[t] = current
            else:
                labels[t] = options[rng.integers(options.size)]
        trajectories.append(Trajectory(seq_id=f"s{n:05d}", true=labels))
    return trajectories


def make_prototypes(K: int, M: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draw K random unit vectors in R^M with pairwise dot products below 0.5.

    Each vector is resampled until it satisfies the bound against the ones
    already accepted.

    Raises:
        GenerationError: If the bound cannot be met (e.g. too many classes for M)
    """
    prototypes: List[np.ndarray] = []
    draws = 0
    while len(prototypes) < K:
        draws += 1
        if draws > MAX_PROTOTYPE_DRAWS:
            raise GenerationError(f"could not place {K} prototypes with dot < {MAX_PROTOTYPE_DOT} in {M} dimensions")
        v = rng.standard_normal(M)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            continue
        v = v / norm
        if all(float(v @ p) < MAX_PROTOTYPE_DOT for p in prototypes):
            prototypes.append(v)
    return np.stack(prototypes)


def simulate_predictor(truth: List[Trajectory], cfg: SynthConfig, rules: RuleSet) -> List[Trajectory]:
    """
    Attach simulated base-predictor outputs (features z and labels y-hat) to truth.

    Args:
        truth: Trajectories from `generate_truth`
        cfg: Synthetic data configuration (seed, M, error rates, noise)
        rules: Rule set used to plant violating mislabels

    Returns:
        Trajectories carrying features, predictions and true labels

    Raises:
        DomainError: If `truth` is empty or lacks true labels
    """
    if not truth:
        raise DomainError("cannot simulate a predictor on an empty set of trajectories")

    streams = _streams(cfg.seed)
    prototypes = make_prototypes(rules.K, cfg.M, streams.prototypes)
    rng = streams.predictor
    reach = rules.reachability_matrix()
    labels = np.arange(rules.K)

    simulated = []
    for traj in truth:
        if traj.true is None:
            raise DomainError(f"trajectory {traj.seq_id} has no true labels")
        pred = np.empty(traj.T, dtype=np.int64)
        for t, y in enumerate(traj.true):
            if rng.random() >= cfg.predictor_error:
                pred[t] = y
                continue
            wrong = labels[labels != y]
            if t > 0 and rng.random() < cfg.violation_bias:
                violating = wrong[~reach[pred[t - 1], wrong]]
                if violating.size:
                    pred[t] = violating[rng.integers(violating.size)]
                    continue
            pred[t] = wrong[rng.integers(wrong.size)]
        noise = cfg.feature_noise * rng.standard_normal((traj.T, cfg.M))
        features = prototypes[traj.true] + noise
        simulated.append(Trajectory(seq_id=traj.seq_id, true=traj.true, pred=pred, features=features))
    return simulated


def generate_dataset(cfg: SynthConfig, rules: RuleSet) -> Tuple[Dataset, Dataset]:
    """
    Generate the train and test datasets of a synthetic configuration.

    The first n_train trajectories form the training set, the rest the test set.
    """
    simulated = simulate_predictor(generate_truth(cfg, rules), cfg, rules)
    train = Dataset(alphabet=rules.alphabet, M=cfg.M, trajectories=simulated[: cfg.n_train])
    test = Dataset(alphabet=rules.alphabet, M=cfg.M, trajectories=simulated[cfg.n_train:])
    logger.info(
        "Generated %d train / %d test trajectories (K=%d, M=%d, T=%d, seed=%d)",
        len(train), len(test), rules.K, cfg.M, cfg.T, cfg.seed,
    )
    return train, test
