"""
Exception hierarchy for the rule layer.

Every error carries the process exit code the CLI reports for it. Errors raised on
bad input also subclass ValueError so callers catching ValueError keep working.
"""
from typing import Optional


class RuleLayerError(Exception):
    """Base class for all errors raised by the rule layer."""

    exit_code: int = 1


class DomainError(RuleLayerError, ValueError):
    """Invalid label index, dimension mismatch or out-of-range argument."""

    exit_code = 3


class RuleParseError(RuleLayerError, ValueError):
    """A rules file could not be parsed."""

    exit_code = 2

    def __init__(self, line: int, message: str):
        """
        Initialize the parse error.

        Args:
            line: 1-based line number of the offending line (0 when not line-specific)
            message: Description of the problem
        """
        self.line = line
        self.message = message
        location = f"line {line}: " if line > 0 else ""
        super().__init__(f"{location}{message}")


class ConfigError(RuleLayerError, ValueError):
    """Invalid or inconsistent configuration."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        prefix = f"{field}: " if field else ""
        super().__init__(f"{prefix}{message}")


class DataError(RuleLayerError, ValueError):
    """Input data is missing, malformed or inconsistent."""

    exit_code = 3


class DatasetLoadError(DataError):
    """A dataset file contains a record that cannot be loaded."""

    def __init__(self, record: str, message: str):
        """
        Initialize the load error.

        Args:
            record: Human-readable record locator, e.g. "line 12 (seq_id=s00003)"
            message: Description of the problem
        """
        self.record = record
        super().__init__(f"{record}: {message}")


class GenerationError(DataError):
    """Synthetic data cannot be generated from the given configuration."""


class TrainingError(RuleLayerError):
    """Training diverged (non-finite loss or gradients)."""

    exit_code = 4


class InvariantError(RuleLayerError):
    """An internal consistency check failed."""

    exit_code = 1
