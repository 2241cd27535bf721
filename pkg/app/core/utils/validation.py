"""Validation utilities shared by the numerical modules."""

import numpy as np

from app.core.errors import DomainError


def check_finite(values: np.ndarray, what: str) -> np.ndarray:
    """
    Ensure an array holds only finite numbers.

    Args:
        values: Array to check
        what: Name used in the error message

    Returns:
        np.ndarray: The input, unchanged

    Raises:
        DomainError: If any entry is NaN or infinite
    """
    if not np.all(np.isfinite(values)):
        raise DomainError(f"{what} contains non-finite entries")
    return values


def check_length(values: np.ndarray, expected: int, what: str) -> np.ndarray:
    """Ensure a 1-D array has the expected length."""
    if values.ndim != 1 or values.shape[0] != expected:
        raise DomainError(f"{what} must have length {expected}, got shape {values.shape}")
    return values
