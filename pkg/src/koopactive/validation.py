"""Small input-validation helpers shared across estimators and controllers."""

import numpy as np

from .errors import DataQualityError, DimensionError


def as_vector(x, length=None, name="x", require_finite=True):
    """Coerce ``x`` to a 1-D float array, optionally checking its length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    if require_finite and not np.all(np.isfinite(arr)):
        raise DataQualityError(f"{name} contains non-finite entries")
    return arr


def as_matrix(a, shape=None, name="a", require_finite=True):
    """Coerce ``a`` to a 2-D float array, optionally checking its shape."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    if shape is not None:
        want = tuple(shape)
        if arr.shape != want:
            raise DimensionError(f"{name} must have shape {want}, got {arr.shape}")
    if require_finite and not np.all(np.isfinite(arr)):
        raise DataQualityError(f"{name} contains non-finite entries")
    return arr


def as_square_matrix(a, n=None, name="a"):
    arr = as_matrix(a, name=name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionError(f"{name} must be {n}x{n}, got {arr.shape}")
    return arr


def as_spd_matrix(a, n=None, name="a", tol=1e-10):
    """Validate a symmetric positive-definite matrix (used for R, Sigma)."""
    arr = as_square_matrix(a, n=n, name=name)
    if not np.allclose(arr, arr.T, atol=1e-10, rtol=0.0):
        raise DimensionError(f"{name} must be symmetric")
    eigvals = np.linalg.eigvalsh(0.5 * (arr + arr.T))
    if eigvals.min() <= tol * max(1.0, eigvals.max()):
        raise DimensionError(f"{name} must be positive definite")
    return arr


def require(condition, message, exc=DimensionError):
    if not condition:
        raise exc(message)
