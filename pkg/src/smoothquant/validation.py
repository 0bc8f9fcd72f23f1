"""Input validation helpers shared by the functional API and the estimators."""

import numpy as np

from .exceptions import DataError, DimensionError, ParameterError


def check_tensor(x, name="x", ndim=None, min_ndim=1, allow_empty=False):
    """Return ``x`` as a C-contiguous float32 array after shape/finite checks.

    ``ndim`` may be an int or a tuple of accepted ranks.
    """
    arr = np.ascontiguousarray(x, dtype=np.float32)
    if ndim is not None:
        accepted = (ndim,) if isinstance(ndim, int) else tuple(ndim)
        if arr.ndim not in accepted:
            raise DimensionError(
                f"{name} must have rank {' or '.join(map(str, accepted))}, got shape {arr.shape}"
            )
    elif arr.ndim < min_ndim:
        raise DimensionError(f"{name} must have rank >= {min_ndim}, got shape {arr.shape}")
    if not allow_empty and arr.size == 0:
        raise DimensionError(f"{name} is empty (shape {arr.shape})")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    return arr


def check_vector(v, name, length=None, positive=False, nonnegative=False):
    arr = np.ascontiguousarray(v, dtype=np.float32).reshape(-1) if np.ndim(v) <= 1 else None
    if arr is None:
        raise DimensionError(f"{name} must be a vector, got shape {np.shape(v)}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} has length {arr.shape[0]}, expected {length}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains NaN or Inf")
    if positive and np.any(arr <= 0):
        raise ParameterError(f"{name} must be strictly positive")
    if nonnegative and np.any(arr < 0):
        raise ParameterError(f"{name} must be non-negative")
    return arr


def check_fraction(value, name, low=0.0, high=1.0, high_inclusive=True):
    value = float(value)
    ok = low <= value <= high if high_inclusive else low <= value < high
    if not ok:
        bracket = "]" if high_inclusive else ")"
        raise ParameterError(f"{name}={value} outside [{low}, {high}{bracket}")
    return value


def check_bits(bits):
    if int(bits) != bits or not 2 <= bits <= 8:
        raise ParameterError(f"bits must be an integer in [2, 8], got {bits}")
    return int(bits)


def as_rows(x):
    """View an (..., C) tensor as a 2-D (rows, C) matrix."""
    return x.reshape(-1, x.shape[-1])
