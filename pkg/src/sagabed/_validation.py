import numbers

import numpy as np

from .exceptions import ConfigError, NumericError, ShapeError


def check_batch(x, n_features=None, name="inputs", allow_nonfinite=False):
    """Coerce ``x`` to a 2-D float64 array and check its width."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if n_features is not None and arr.shape[1] != n_features:
        raise ShapeError(f"{name} has {arr.shape[1]} columns, expected {n_features}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def check_vector(x, size=None, name="vector"):
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if size is not None and arr.size != size:
        raise ShapeError(f"{name} has length {arr.size}, expected {size}")
    return arr


def check_scores(scores, name="scores"):
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return arr


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ConfigError(f"must be an integer >= {minimum}, got {value!r}", key=name)
    return int(value)


def check_positive_float(value, name, allow_inf=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"must be a real number, got {value!r}", key=name) from None
    if not v > 0 or (np.isinf(v) and not allow_inf) or np.isnan(v):
        raise ConfigError(f"must be > 0, got {value!r}", key=name)
    return v


def check_random_state(seed):
    """Turn ``seed`` into a ``np.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
