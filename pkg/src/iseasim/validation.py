"""Shared input validation helpers and error types."""

import numpy as np


class ValidationError(ValueError):
    """Raised when a domain object or operation input violates its contract."""


class NonConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its budget, or when a
    Monte Carlo run excludes more trials than the configured limit."""


def as_vector(x, name, length=None, dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValidationError(f"{name} must have length {length}, got {arr.shape[0]}")
    return arr


def as_matrix(x, name, shape=None, dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if shape is not None:
        want = tuple(s for s in shape)
        got = arr.shape
        for w, g in zip(want, got):
            if w is not None and w != g:
                raise ValidationError(f"{name} must have shape {want}, got {got}")
    return arr


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def check_positive(arr, name, strict=True):
    arr = np.asarray(arr)
    if strict:
        if np.any(arr <= 0):
            raise ValidationError(f"{name} must be strictly positive")
    else:
        if np.any(arr < 0):
            raise ValidationError(f"{name} must be nonnegative")
    return arr
