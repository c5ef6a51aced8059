"""Input validation helpers used across the package and the estimator API."""

import numpy as np

from .exceptions import DataError


def as_float_array(values, name="values", ndim=None):
    """Convert to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DataError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: non-finite entries are not allowed")
    return arr


def as_coords_array(coords, name="coordinates"):
    """Validate an (n, 2) array of planar coordinates."""
    arr = np.asarray(coords, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DataError(f"{name}: expected shape (n, 2), got {arr.shape}")
    if arr.shape[0] == 0:
        raise DataError(f"{name}: must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: non-finite coordinates are not allowed")
    return arr


def check_positive(name, value, allow_zero=False):
    """Check a scalar is finite and positive (or nonnegative)."""
    v = float(value)
    if not np.isfinite(v):
        raise DataError(f"{name}: must be finite, got {value!r}")
    if allow_zero:
        if v < 0:
            raise DataError(f"{name}: must be >= 0, got {value!r}")
    elif v <= 0:
        raise DataError(f"{name}: must be > 0, got {value!r}")
    return v


def check_square_matrix(M, name="matrix"):
    """Validate a square 2-d float matrix and return it as float64."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DataError(f"{name}: expected a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: non-finite entries are not allowed")
    return arr
