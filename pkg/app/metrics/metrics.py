"""
Classification, clustering and rule-violation metrics.

All functions are pure and operate on integer label arrays. Clustering metrics
(NMI, ARI) treat labels as partition ids, so they are invariant to relabelling.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DomainError, InvariantError
from app.core.label_rules import RuleSet
from app.core.mdp_env import CATEGORY_REWARDS, VARIANT_CATEGORIES, RewardCategory, StepRecord

logger = logging.getLogger(__name__)


def _labels(values: Sequence[int], what: str) -> np.ndarray:
    array = np.asarray(values)
    if array.ndim != 1:
        raise DomainError(f"{what} must be a 1-D label sequence")
    return array.astype(np.int64)


def _pair(true: Sequence[int], assigned: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    t, a = _labels(true, "true labels"), _labels(assigned, "assigned labels")
    if t.shape != a.shape:
        raise DomainError(f"label sequences differ in length: {t.shape[0]} vs {a.shape[0]}")
    return t, a


def confusion_matrix(true: Sequence[int], assigned: Sequence[int], K: int) -> np.ndarray:
    """K x K counts, rows are true labels and columns assigned labels."""
    t, a = _pair(true, assigned)
    if t.size and (min(t.min(), a.min()) < 0 or max(t.max(), a.max()) >= K):
        raise DomainError(f"labels must lie in [0, {K})")
    matrix = np.zeros((K, K), dtype=np.int64)
    np.add.at(matrix, (t, a), 1)
    return matrix


def cohen_kappa(confusion: np.ndarray) -> float:
    """
    Cohen's kappa from a confusion matrix.

    When chance agreement is total (a single label on both sides) kappa is 1 for
    perfect agreement and 0 otherwise.
    """
    n = confusion.sum()
    if n == 0:
        raise DomainError("kappa needs at least one instance")
    p_o = np.trace(confusion) / n
    p_e = float(np.sum(confusion.sum(axis=1) * confusion.sum(axis=0))) / float(n) ** 2
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    per_class: List[ClassMetrics]
    accuracy: float
    kappa: float
    confusion: np.ndarray

    @property
    def macro_f1(self) -> float:
        return float(np.mean([c.f1 for c in self.per_class]))


def classification_report(
    true: Sequence[int], assigned: Sequence[int], K: int, names: Optional[Sequence[str]] = None
) -> ClassificationReport:
    """
    Per-class precision, recall and F1 plus accuracy and Cohen's kappa.

    Args:
        true: True labels
        assigned: Labels to score
        K: Number of labels
        names: Optional label names; defaults to the indices

    Returns:
        ClassificationReport: Metrics; classes never predicted or never present get 0

    Raises:
        DomainError: If the sequences are empty or differ in length
    """
    confusion = confusion_matrix(true, assigned, K)
    n = int(confusion.sum())
    if n == 0:
        raise DomainError("classification metrics need at least one instance")
    names = list(names) if names is not None else [str(k) for k in range(K)]

    per_class = []
    for k in range(K):
        tp = int(confusion[k, k])
        predicted = int(confusion[:, k].sum())
        support = int(confusion[k, :].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(
            ClassMetrics(label=k, name=names[k], precision=precision, recall=recall, f1=f1, support=support)
        )
    return ClassificationReport(
        per_class=per_class,
        accuracy=float(np.trace(confusion)) / n,
        kappa=cohen_kappa(confusion),
        confusion=confusion,
    )


def contingency_matrix(true: Sequence[int], assigned: Sequence[int]) -> np.ndarray:
    """Counts of co-occurring (true class, assigned cluster) ids; only ids that occur get a row/column."""
    t, a = _pair(true, assigned)
    _, class_idx = np.unique(t, return_inverse=True)
    _, cluster_idx = np.unique(a, return_inverse=True)
    table = np.zeros((class_idx.max(initial=-1) + 1, cluster_idx.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (class_idx, cluster_idx), 1)
    return table


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def _same_partition(table: np.ndarray) -> bool:
    return table.shape[0] == table.shape[1] and bool(
        np.all(np.count_nonzero(table, axis=0) == 1) and np.all(np.count_nonzero(table, axis=1) == 1)
    )


def nmi(true: Sequence[int], assigned: Sequence[int]) -> float:
    """
    Normalized mutual information I(T; A) / sqrt(H(T) H(A)), natural logarithm.

    Partitions that agree up to relabelling score exactly 1. Otherwise, if either
    side has zero entropy, the score is 0.
    """
    table = contingency_matrix(true, assigned)
    if table.size == 0:
        raise DomainError("NMI needs at least one instance")
    if _same_partition(table):
        return 1.0
    h_true = _entropy(table.sum(axis=1))
    h_assigned = _entropy(table.sum(axis=0))
    if h_true == 0.0 or h_assigned == 0.0:
        return 0.0

    n = table.sum()
    rows, cols = np.nonzero(table)
    joint = table[rows, cols] / n
    outer = (table.sum(axis=1)[rows] / n) * (table.sum(axis=0)[cols] / n)
    mi = float(np.sum(joint * (np.log(joint) - np.log(outer))))
    return float(np.clip(mi / np.sqrt(h_true * h_assigned), 0.0, 1.0))


def _comb2(values: np.ndarray) -> float:
    values = values.astype(np.float64)
    return float(np.sum(values * (values - 1.0) / 2.0))


def ari(true: Sequence[int], assigned: Sequence[int]) -> float:
    """
    Adjusted Rand index from the contingency table.

    Degenerate cases where the expected index equals its maximum (both sides a
    single cluster, or both all singletons) are perfect matches and score 1.
    """
    table = contingency_matrix(true, assigned)
    n = table.sum()
    if n == 0:
        raise DomainError("ARI needs at least one instance")
    if n < 2:
        return 1.0
    sum_cells = _comb2(table.ravel())
    sum_rows = _comb2(table.sum(axis=1))
    sum_cols = _comb2(table.sum(axis=0))
    expected = sum_rows * sum_cols / (n * (n - 1) / 2.0)
    maximum = (sum_rows + sum_cols) / 2.0
    if maximum == expected:
        return 1.0
    return float((sum_cells - expected) / (maximum - expected))


def violation_counts(sequences: Iterable[Sequence[int]], rules: RuleSet) -> Tuple[int, int]:
    """
    Count impossible consecutive pairs within each sequence.

    Returns:
        (violations, pairs): Pairs never straddle two sequences
    """
    reach = rules.reachability_matrix()
    violations = pairs = 0
    for sequence in sequences:
        labels = _labels(sequence, "label sequence")
        if labels.size and (labels.min() < 0 or labels.max() >= rules.K):
            raise DomainError(f"labels must lie in [0, {rules.K})")
        if labels.size < 2:
            continue
        violations += int(np.count_nonzero(~reach[labels[:-1], labels[1:]]))
        pairs += labels.size - 1
    return violations, pairs


def violation_rate(sequences: Iterable[Sequence[int]], rules: RuleSet) -> float:
    """Fraction of consecutive pairs that are impossible transitions; 0 when there are no pairs."""
    violations, pairs = violation_counts(sequences, rules)
    if pairs == 0:
        logger.warning("No consecutive pairs to score; violation rate reported as 0")
        return 0.0
    return violations / pairs


@dataclass
class CategoryCounts:
    """Steps per reward category."""

    counts: Dict[RewardCategory, int] = field(default_factory=dict)

    @classmethod
    def empty(cls, variant: str) -> "CategoryCounts":
        return cls(counts={category: 0 for category in VARIANT_CATEGORIES[variant]})

    def __getitem__(self, category: RewardCategory) -> int:
        return self.counts.get(category, 0)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def total_reward(self) -> int:
        return sum(CATEGORY_REWARDS[category] * count for category, count in self.counts.items())

    def add(self, category: RewardCategory, count: int = 1) -> None:
        self.counts[category] = self.counts.get(category, 0) + count

    def merge(self, other: "CategoryCounts") -> "CategoryCounts":
        merged = CategoryCounts(counts=dict(self.counts))
        for category, count in other.counts.items():
            merged.add(category, count)
        return merged

    def as_dict(self) -> Dict[str, int]:
        return {category.value: count for category, count in self.counts.items()}


def reward_category_counts(records: Iterable[StepRecord], variant: Optional[str] = None) -> CategoryCounts:
    """
    Tally the reward categories of a trace.

    Raises:
        InvariantError: If a step's reward disagrees with its category
    """
    counts = CategoryCounts.empty(variant) if variant is not None else CategoryCounts()
    for record in records:
        if record.reward != CATEGORY_REWARDS[record.category]:
            raise InvariantError(
                f"step t={record.t} has reward {record.reward} but category {record.category.value}"
            )
        counts.add(record.category)
    return counts


@dataclass(frozen=True)
class CorrectBreakdown:
    """How the correctly labelled steps were reached."""

    maintained: int
    reassigned: int

    @property
    def total(self) -> int:
        return self.maintained + self.reassigned


def correct_breakdown(true: Sequence[int], pred: Sequence[int], assigned: Sequence[int]) -> CorrectBreakdown:
    t, a = _pair(true, assigned)
    _, p = _pair(true, pred)
    correct = t == a
    return CorrectBreakdown(
        maintained=int(np.count_nonzero(correct & (a == p))),
        reassigned=int(np.count_nonzero(correct & (a != p))),
    )


def reassigned_accuracy(true: Sequence[int], pred: Sequence[int], assigned: Sequence[int]) -> float:
    """Accuracy over the steps whose label was changed; 0 when nothing was reassigned."""
    t, a = _pair(true, assigned)
    _, p = _pair(true, pred)
    changed = a != p
    if not np.any(changed):
        return 0.0
    return float(np.mean(t[changed] == a[changed]))
