"""Input validation helpers used at the public API boundary."""

import numpy as np

from .errors import ValidationError


def require(condition, message):
    if not condition:
        raise ValidationError(message)


def as_design_matrix(x, name="design"):
    """Coerce to a finite 2-D float array with at least one row and column."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    require(arr.ndim == 2, f"{name} must be a 2-D array, got ndim={arr.ndim}")
    require(arr.shape[0] >= 1 and arr.shape[1] >= 1, f"{name} must be non-empty")
    require(np.isfinite(arr).all(), f"{name} contains non-finite values")
    return arr


def as_output_vector(y, n=None, name="outputs"):
    """Coerce to a finite 1-D float array, optionally of fixed length ``n``."""
    arr = np.asarray(y, dtype=float).reshape(-1)
    require(arr.size >= 1, f"{name} must be non-empty")
    require(np.isfinite(arr).all(), f"{name} contains non-finite values")
    if n is not None:
        require(arr.size == n, f"{name} has length {arr.size}, expected {n}")
    return arr


def as_output_matrix(y, n=None, name="outputs"):
    """Coerce to a finite 2-D float array of shape (k, n)."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    require(arr.ndim == 2, f"{name} must be a 2-D array, got ndim={arr.ndim}")
    require(np.isfinite(arr).all(), f"{name} contains non-finite values")
    if n is not None:
        require(
            arr.shape[1] == n,
            f"{name} has {arr.shape[1]} columns, expected {n} (one per design row)",
        )
    return arr


def as_positive_scalar(value, name):
    v = float(value)
    require(np.isfinite(v) and v > 0, f"{name} must be a positive finite number")
    return v


def as_nonnegative_scalar(value, name):
    v = float(value)
    require(np.isfinite(v) and v >= 0, f"{name} must be a non-negative finite number")
    return v


def frozen_array(arr):
    """Read-only copy, used to keep fitted models immutable."""
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out
