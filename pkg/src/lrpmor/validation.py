"""Input validation helpers shared by the estimators and free functions."""

import numpy as np

from .exceptions import DimensionMismatch, ValidationError


def as_real_matrix(X, name="array", *, ndim=2, copy=True):
    """Return ``X`` as a finite float64 array with ``ndim`` dimensions.

    Vectors are promoted to columns when ``ndim == 2``.
    """
    arr = np.array(X, dtype=float, copy=copy)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def as_complex_array(X, name="array"):
    arr = np.asarray(X, dtype=complex)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def check_square(X, name="matrix"):
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {X.shape}")
    return X


def check_rows(X, n, name):
    if X.shape[0] != n:
        raise DimensionMismatch(f"{name} must have {n} rows, got {X.shape[0]}")
    return X


def check_cols(X, n, name):
    if X.shape[1] != n:
        raise DimensionMismatch(f"{name} must have {n} columns, got {X.shape[1]}")
    return X


def freeze(arr):
    """Mark an array read-only and return it."""
    arr.setflags(write=False)
    return arr


def as_param_vector(p, k, name="p"):
    arr = np.atleast_1d(np.asarray(p, dtype=float)).ravel()
    if arr.shape != (k,):
        raise DimensionMismatch(f"{name} must have length {k}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains NaN or Inf")
    return arr


def is_identity(E):
    return E.shape[0] == E.shape[1] and np.array_equal(E, np.eye(E.shape[0]))
