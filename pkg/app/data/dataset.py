"""
Trajectory data model and its line-delimited persistence format.

A dataset file starts with one header line carrying the alphabet and the feature
dimension M, followed by one record per instance. Records of one sequence are
contiguous and ordered by their 0-based step `t`.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.errors import DataError, DatasetLoadError, DomainError
from app.core.label_rules import LabelAlphabet
from app.core.utils.files import atomic_write_text

logger = logging.getLogger(__name__)

DATASET_FORMAT = "rule-layer-dataset"


@dataclass(frozen=True)
class Instance:
    """One step of a trajectory as seen by the rule layer."""

    features: np.ndarray
    pred_label: int
    true_label: Optional[int]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    A length-T sequence from one subject or segment.

    Arrays are stored column-wise: `features` is (T, M) float64, `pred` and `true`
    are (T,) int64. Truth-only trajectories (straight from the stage process) carry
    no features or predictions; unlabelled inputs carry no `true`.
    """

    seq_id: str
    true: Optional[np.ndarray] = None
    pred: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        lengths = []
        for name in ("true", "pred"):
            values = getattr(self, name)
            if values is not None:
                values = np.array(values, dtype=np.int64)
                if values.ndim != 1:
                    raise DomainError(f"{name} labels of {self.seq_id} must be 1-D")
                values.setflags(write=False)
                object.__setattr__(self, name, values)
                lengths.append(values.shape[0])
        if self.features is not None:
            features = np.array(self.features, dtype=np.float64)
            if features.ndim != 2:
                raise DomainError(f"features of {self.seq_id} must be a (T, M) matrix")
            features.setflags(write=False)
            object.__setattr__(self, "features", features)
            lengths.append(features.shape[0])
        if not lengths:
            raise DomainError(f"trajectory {self.seq_id} carries no labels")
        if len(set(lengths)) != 1:
            raise DomainError(f"trajectory {self.seq_id} has mismatched lengths {lengths}")
        if lengths[0] < 1:
            raise DomainError(f"trajectory {self.seq_id} is empty")
        if (self.features is None) != (self.pred is None):
            raise DomainError(f"trajectory {self.seq_id} needs both features and predictions or neither")

    def __len__(self) -> int:
        return self.T

    @property
    def T(self) -> int:
        for values in (self.true, self.pred, self.features):
            if values is not None:
                return int(values.shape[0])
        return 0

    @property
    def M(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    @property
    def has_truth(self) -> bool:
        return self.true is not None

    def instance(self, t: int) -> Instance:
        if self.features is None or self.pred is None:
            raise DataError(f"trajectory {self.seq_id} has no features or predictions")
        true_label = None if self.true is None else int(self.true[t])
        return Instance(features=self.features[t], pred_label=int(self.pred[t]), true_label=true_label)

    @property
    def instances(self) -> List[Instance]:
        return [self.instance(t) for t in range(self.T)]

    def slice(self, start: int, stop: int, seq_id: str) -> "Trajectory":
        return Trajectory(
            seq_id=seq_id,
            true=None if self.true is None else self.true[start:stop],
            pred=None if self.pred is None else self.pred[start:stop],
            features=None if self.features is None else self.features[start:stop],
        )

    def same_as(self, other: "Trajectory") -> bool:
        """Structural equality: id, labels and bit-identical features."""
        def _eq(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> bool:
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.array_equal(a, b))

        return (
            self.seq_id == other.seq_id
            and _eq(self.true, other.true)
            and _eq(self.pred, other.pred)
            and _eq(self.features, other.features)
        )


@dataclass
class Dataset:
    """Trajectories sharing one alphabet and feature dimension."""

    alphabet: LabelAlphabet
    M: int
    trajectories: List[Trajectory] = field(default_factory=list)

    def __post_init__(self) -> None:
        for traj in self.trajectories:
            self._check(traj)

    def _check(self, traj: Trajectory) -> None:
        if traj.features is not None and traj.M != self.M:
            raise DomainError(f"trajectory {traj.seq_id} has M={traj.M}, dataset has M={self.M}")
        for name in ("true", "pred"):
            values = getattr(traj, name)
            if values is not None and values.size and (values.min() < 0 or values.max() >= self.alphabet.K):
                raise DomainError(f"trajectory {traj.seq_id} has {name} labels outside the alphabet")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    @property
    def K(self) -> int:
        return self.alphabet.K

    @property
    def has_truth(self) -> bool:
        return all(traj.has_truth for traj in self.trajectories)

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.alphabet == other.alphabet
            and self.M == other.M
            and len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self, other))
        )


class DatasetHeader(BaseModel):
    """Header line of a dataset file."""
    model_config = ConfigDict(extra="ignore", strict=True)

    alphabet: List[str] = Field(..., description="Label names in index order")
    M: int = Field(..., description="Feature dimension", ge=1)


class DatasetRecord(BaseModel):
    """One instance line of a dataset file."""
    model_config = ConfigDict(extra="forbid", strict=True)

    seq_id: str = Field(..., description="Sequence identifier")
    t: int = Field(..., description="0-based step within the sequence", ge=0)
    features: List[float] = Field(..., description="Feature vector z")
    pred: int = Field(..., description="Predicted label index")
    true: Optional[int] = Field(None, description="True label index, null when unknown")


def save_dataset(dataset: Dataset, path: str) -> None:
    """
    Write a dataset file atomically.

    Features are written with shortest round-trip float formatting, so loading the
    file restores them bit for bit.

    Args:
        dataset: Dataset to write; every trajectory must carry features and predictions
        path: Destination file

    Raises:
        DataError: If a trajectory has no features or predictions
    """
    lines = [json.dumps({"format": DATASET_FORMAT, "alphabet": list(dataset.alphabet.names), "M": dataset.M})]
    for traj in dataset:
        if traj.features is None or traj.pred is None:
            raise DataError(f"trajectory {traj.seq_id} has no features or predictions to save")
        true = traj.true.tolist() if traj.true is not None else [None] * traj.T
        for t, (row, pred, label) in enumerate(zip(traj.features.tolist(), traj.pred.tolist(), true)):
            lines.append(json.dumps({"seq_id": traj.seq_id, "t": t, "features": row, "pred": pred, "true": label}))
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.debug("Wrote %d trajectories to %s", len(dataset), path)


def parse_dataset(text: str, source: str = "<dataset>") -> Dataset:
    """
    Parse the content of a dataset file.

    Raises:
        DatasetLoadError: On schema mismatch, ragged features, unknown labels or
            out-of-order steps; the error names the offending record
    """
    lines = [(no, line) for no, line in enumerate(text.splitlines(), start=1) if line.strip()]
    if not lines:
        raise DatasetLoadError(f"{source}", "empty dataset file")

    header_no, header_line = lines[0]
    try:
        header = DatasetHeader.model_validate(json.loads(header_line))
        alphabet = LabelAlphabet(names=tuple(header.alphabet))
    except (json.JSONDecodeError, ValidationError, ValueError) as e:
        raise DatasetLoadError(f"{source} line {header_no} (header)", f"invalid header: {e}")

    trajectories: List[Trajectory] = []
    rows: List[DatasetRecord] = []

    def flush() -> None:
        if not rows:
            return
        labels = [row.true for row in rows]
        if any(label is None for label in labels) and not all(label is None for label in labels):
            raise DatasetLoadError(f"{source} (seq_id={rows[0].seq_id})", "true labels are partially missing")
        true = None if labels[0] is None else np.array(labels, dtype=np.int64)
        trajectories.append(
            Trajectory(
                seq_id=rows[0].seq_id,
                true=true,
                pred=np.array([row.pred for row in rows], dtype=np.int64),
                features=np.array([row.features for row in rows], dtype=np.float64),
            )
        )
        rows.clear()

    seen: set[str] = set()
    for line_no, line in lines[1:]:
        where = f"{source} line {line_no}"
        try:
            record = DatasetRecord.model_validate(json.loads(line))
        except json.JSONDecodeError as e:
            raise DatasetLoadError(where, f"invalid JSON: {e}")
        except ValidationError as e:
            first = e.errors()[0]
            field_name = ".".join(str(part) for part in first["loc"])
            raise DatasetLoadError(where, f"schema mismatch at {field_name!r}: {first['msg']}")
        where = f"{where} (seq_id={record.seq_id}, t={record.t})"

        if len(record.features) != header.M:
            raise DatasetLoadError(where, f"feature length {len(record.features)} != M={header.M}")
        for name in ("pred", "true"):
            label = getattr(record, name)
            if label is not None and not 0 <= label < alphabet.K:
                raise DatasetLoadError(where, f"unknown {name} label index {label}")
        if not all(np.isfinite(record.features)):
            raise DatasetLoadError(where, "non-finite feature value")

        if rows and record.seq_id != rows[0].seq_id:
            flush()
        if not rows:
            if record.seq_id in seen:
                raise DatasetLoadError(where, "records of a sequence must be contiguous")
            seen.add(record.seq_id)
        if record.t != len(rows):
            raise DatasetLoadError(where, f"expected t={len(rows)}")
        rows.append(record)
    flush()

    return Dataset(alphabet=alphabet, M=header.M, trajectories=trajectories)


def load_dataset(path: str) -> Dataset:
    """
    Load a dataset file.

    Args:
        path: Path to the dataset file

    Returns:
        Dataset: The loaded trajectories with their alphabet and M

    Raises:
        DatasetLoadError: If the file is missing or a record is invalid
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except FileNotFoundError:
        raise DatasetLoadError(path, "dataset file not found")
    return parse_dataset(text, source=path)


def segment(trajectories: Sequence[Trajectory], max_T: int) -> List[Trajectory]:
    """
    Split trajectories into consecutive pieces of at most `max_T` steps.

    Concatenating the pieces in order reproduces the input. Pieces of a split
    trajectory get ids `<seq_id>#<k>`; trajectories that fit are returned as is.

    Raises:
        DomainError: If max_T < 2
    """
    if max_T < 2:
        raise DomainError(f"max_T must be at least 2, got {max_T}")
    pieces: List[Trajectory] = []
    for traj in trajectories:
        if traj.T <= max_T:
            pieces.append(traj)
            continue
        for k, start in enumerate(range(0, traj.T, max_T)):
            pieces.append(traj.slice(start, min(start + max_T, traj.T), f"{traj.seq_id}#{k}"))
    return pieces
