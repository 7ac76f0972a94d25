"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_fraction(value, name, *, closed_right=True):
    value = float(value)
    upper_ok = value <= 1.0 if closed_right else value < 1.0
    if not (value >= 0.0 and upper_ok):
        bracket = "]" if closed_right else ")"
        raise ValueError(f"{name} must lie in [0, 1{bracket}, got {value}")
    return value


def check_complex_array(x, name, ndim=None, allow_zero=True):
    """Coerce to a finite complex128 array, optionally checking rank."""
    arr = np.asarray(x)
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError(f"{name} must be numeric")
    arr = arr.astype(np.complex128, copy=False)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if not allow_zero and not np.any(arr):
        raise ValueError(f"{name} is identically zero")
    return arr


def check_index(value, size, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer")
    if not 0 <= value < size:
        raise IndexError(f"{name}={value} out of range [0, {size})")
    return int(value)
