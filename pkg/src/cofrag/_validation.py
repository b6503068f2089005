"""Small argument checks shared across modules."""

from __future__ import annotations

import numpy as np


def check_positive_sizes(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr <= 0):
        raise ValueError(f"{name} must be strictly positive (sizes live in (0, inf))")
    return arr


def check_range(value, low, high, name, closed_low=True, closed_high=True):
    """Raise ``ValueError`` unless ``value`` lies in the given interval."""
    ok_low = value >= low if closed_low else value > low
    ok_high = value <= high if closed_high else value < high
    if not (ok_low and ok_high):
        lb = "[" if closed_low else "("
        rb = "]" if closed_high else ")"
        raise ValueError(f"{name} must lie in {lb}{low:g}, {high:g}{rb}, got {value}")
    return value


def check_finite_array(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
