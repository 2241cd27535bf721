"""
Label alphabets and transition-impossibility rules.

A RuleSet stores the impossible one-step transitions between labels; the reachable
set of a label is the complement. Self-transitions are always reachable.
"""
import logging
import os
from functools import lru_cache
from importlib import resources
from typing import Dict, FrozenSet, Iterable, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.errors import ConfigError, DomainError, RuleParseError

logger = logging.getLogger(__name__)

BUILTIN_RULES = ("sleep", "seizure")


@lru_cache(maxsize=64)
def _reachability(K: int, impossible: FrozenSet[Tuple[int, int]]) -> np.ndarray:
    matrix = np.ones((K, K), dtype=bool)
    for src, dst in impossible:
        matrix[src, dst] = False
    matrix.setflags(write=False)
    return matrix


# separators of the rules file format
RESERVED_NAME_TOKENS = (",", "#", "!>", "\n", "\r")


class LabelAlphabet(BaseModel):
    """Ordered set of class labels; indices are 0-based."""

    model_config = ConfigDict(frozen=True)

    names: Tuple[str, ...] = Field(..., description="Label names in index order")

    @field_validator("names")
    @classmethod
    def _check_names(cls, names: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(names) < 2:
            raise ValueError("an alphabet needs at least 2 labels")
        if any(not name.strip() for name in names):
            raise ValueError("label names must be non-empty")
        for name in names:
            if name != name.strip():
                raise ValueError(f"label name {name!r} has surrounding whitespace")
            reserved = [token for token in RESERVED_NAME_TOKENS if token in name]
            if reserved:
                raise ValueError(f"label name {name!r} contains reserved {reserved[0]!r}")
        if len(set(names)) != len(names):
            raise ValueError(f"label names must be unique: {list(names)}")
        return names

    @property
    def K(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        """
        Look up the index of a label name.

        Raises:
            DomainError: If the name is not part of the alphabet
        """
        try:
            return self.names.index(name)
        except ValueError:
            raise DomainError(f"unknown label {name!r}; expected one of {list(self.names)}")

    def name(self, label: int) -> str:
        return self.names[self.check(label)]

    def check(self, label: int) -> int:
        """Return the label unchanged if it is a valid index, raise DomainError otherwise."""
        if isinstance(label, (bool, np.bool_)) or not isinstance(label, (int, np.integer)):
            raise DomainError(f"label index must be an integer, got {label!r}")
        if not 0 <= label < len(self.names):
            raise DomainError(f"label index {label} out of range [0, {len(self.names)})")
        return int(label)


class RuleSet(BaseModel):
    """Impossibility relation over an alphabet."""

    model_config = ConfigDict(frozen=True)

    alphabet: LabelAlphabet
    impossible: FrozenSet[Tuple[int, int]] = Field(
        default_factory=frozenset, description="Ordered (from, to) pairs that cannot occur"
    )

    @model_validator(mode="after")
    def _check_pairs(self) -> "RuleSet":
        K = self.alphabet.K
        for src, dst in self.impossible:
            if not (0 <= src < K and 0 <= dst < K):
                raise ValueError(f"impossible pair ({src}, {dst}) references an unknown label")
            if src == dst:
                raise ValueError(
                    f"self-transition {self.alphabet.names[src]} -> itself cannot be impossible"
                )
        return self

    @property
    def K(self) -> int:
        return self.alphabet.K

    def reachability_matrix(self) -> np.ndarray:
        """K x K read-only boolean matrix, entry [a, b] true iff b is reachable from a."""
        return _reachability(self.K, self.impossible)

    def reachable(self, label: int) -> Tuple[int, ...]:
        """The reachable set of a label, always including the label itself."""
        row = self.reachability_matrix()[self.alphabet.check(label)]
        return tuple(int(b) for b in np.flatnonzero(row))

    def impossible_from(self, label: int) -> Tuple[int, ...]:
        row = self.reachability_matrix()[self.alphabet.check(label)]
        return tuple(int(b) for b in np.flatnonzero(~row))

    def is_reachable(self, src: int, dst: int) -> bool:
        return bool(self.reachability_matrix()[self.alphabet.check(src), self.alphabet.check(dst)])


def is_reachable(rules: RuleSet, src: int, dst: int) -> bool:
    """
    Check whether `dst` is one-step reachable from `src`.

    Args:
        rules: Rule set to consult
        src: Label of the previous step
        dst: Label of the current step

    Returns:
        bool: True iff (src, dst) is not an impossible pair

    Raises:
        DomainError: If either label is not a valid index
    """
    return rules.is_reachable(src, dst)


def _split_names(text: str) -> List[str]:
    return [part.strip() for part in text.split(",")]


def parse_rules(text: str) -> RuleSet:
    """
    Parse a rules file.

    The first non-comment line declares the alphabet (`labels: A, B, C`); every
    following line declares impossible transitions (`A !> B, C`). `#` starts a
    comment. Duplicate pairs collapse.

    Args:
        text: Content of the rules file

    Returns:
        RuleSet: The parsed rule set

    Raises:
        RuleParseError: On a malformed line, an unknown label or a self-pair
    """
    alphabet: LabelAlphabet | None = None
    pairs: set[Tuple[int, int]] = set()

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        if alphabet is None:
            key, sep, rest = line.partition(":")
            if not sep or key.strip() != "labels":
                raise RuleParseError(line_no, "expected 'labels: L1, L2, ...' header")
            names = _split_names(rest)
            try:
                alphabet = LabelAlphabet(names=tuple(names))
            except ValueError as e:
                raise RuleParseError(line_no, f"invalid label header: {_first_error(e)}")
            continue

        src_text, sep, dst_text = line.partition("!>")
        if not sep:
            raise RuleParseError(line_no, f"expected 'FROM !> TO1, TO2', got {line!r}")
        src_name = src_text.strip()
        dst_names = _split_names(dst_text)
        if not src_name or not any(dst_names) or any(not name for name in dst_names):
            raise RuleParseError(line_no, f"malformed rule {line!r}")

        src = _lookup(alphabet, src_name, line_no)
        for dst_name in dst_names:
            dst = _lookup(alphabet, dst_name, line_no)
            if dst == src:
                raise RuleParseError(line_no, f"self-transition {src_name} !> {dst_name} is not allowed")
            pairs.add((src, dst))

    if alphabet is None:
        raise RuleParseError(0, "missing 'labels:' header")

    rules = RuleSet(alphabet=alphabet, impossible=frozenset(pairs))
    if not pairs:
        logger.warning("Rule set over %s declares no impossible transitions", list(alphabet.names))
    return rules


def _lookup(alphabet: LabelAlphabet, name: str, line_no: int) -> int:
    try:
        return alphabet.index(name)
    except DomainError:
        raise RuleParseError(line_no, f"unknown label {name!r}")


def _first_error(error: Exception) -> str:
    errors = getattr(error, "errors", None)
    if callable(errors):
        details = errors()
        if details:
            return str(details[0].get("msg", error))
    return str(error)


def serialize_rules(rules: RuleSet) -> str:
    """
    Serialize a rule set in the rules file format.

    The labels line comes first, then one line per source label with a non-empty
    impossibility list, sources and targets sorted by index.
    """
    names = rules.alphabet.names
    lines = [f"labels: {', '.join(names)}"]
    by_source: Dict[int, List[int]] = {}
    for src, dst in rules.impossible:
        by_source.setdefault(src, []).append(dst)
    for src in sorted(by_source):
        targets = ", ".join(names[dst] for dst in sorted(by_source[src]))
        lines.append(f"{names[src]} !> {targets}")
    return "\n".join(lines) + "\n"


def builtin_rules(name: str) -> RuleSet:
    """
    Load one of the builtin rule sets shipped with the package.

    Args:
        name: Either "sleep" or "seizure"

    Returns:
        RuleSet: The builtin rule set

    Raises:
        DomainError: If the name is unknown
    """
    if name not in BUILTIN_RULES:
        raise DomainError(f"unknown builtin rule set {name!r}; expected one of {list(BUILTIN_RULES)}")
    text = resources.files("app.rules").joinpath(f"{name}.rules").read_text(encoding="utf-8")
    return parse_rules(text)


def load_rules(ref: str) -> RuleSet:
    """
    Resolve a rules reference: a builtin name or a path to a rules file.

    Raises:
        RuleParseError: If the file content is invalid or not UTF-8 text
        ConfigError: If the reference is neither a builtin nor an existing file
    """
    if ref in BUILTIN_RULES:
        return builtin_rules(ref)
    if not os.path.isfile(ref):
        raise ConfigError(
            f"rules {ref!r} is neither a builtin ({', '.join(BUILTIN_RULES)}) nor a file", field="synth.rules"
        )
    try:
        with open(ref, "r", encoding="utf-8") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise RuleParseError(0, f"{ref} is not UTF-8 text: {e.reason}")
    return parse_rules(text)


def rules_from_pairs(names: Iterable[str], pairs: Iterable[Tuple[str, str]]) -> RuleSet:
    """Build a rule set from label names and (from, to) name pairs."""
    alphabet = LabelAlphabet(names=tuple(names))
    impossible = frozenset((alphabet.index(src), alphabet.index(dst)) for src, dst in pairs)
    return RuleSet(alphabet=alphabet, impossible=impossible)
