"""Input validation helpers used by the estimators and domain types."""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, *, allow_empty: bool = False) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def check_same_length(*pairs) -> None:
    """pairs: (name, array) tuples; all arrays must share one length."""
    lengths = {name: len(arr) for name, arr in pairs}
    if len(set(lengths.values())) > 1:
        raise ValueError(f"length mismatch: {lengths}")


def check_positive(arr, name: str) -> None:
    if np.any(np.asarray(arr) <= 0):
        raise ValueError(f"{name} must be strictly positive")


def check_nonnegative(arr, name: str) -> None:
    if np.any(np.asarray(arr) < 0):
        raise ValueError(f"{name} must be non-negative")


def check_strictly_increasing(arr, name: str) -> None:
    if np.any(np.diff(np.asarray(arr)) <= 0):
        raise ValueError(f"{name} must be strictly increasing")


def check_in_range(value: float, lo: float, hi: float, name: str) -> None:
    if not (lo <= value <= hi):
        raise ValueError(f"{name}={value} outside [{lo}, {hi}]")
