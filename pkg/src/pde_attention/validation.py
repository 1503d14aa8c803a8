"""Input validation helpers used by the public API and the estimators."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError


def as_float_field(values, *, name: str = "field", require_square: bool = False) -> np.ndarray:
    """Coerce to a 2-D float64 array of field values and validate it.

    Rows are the per-query attention distributions; most operators are
    row-wise, so rectangular (n_rows, T) inputs are accepted unless a full
    2-D stencil requires a square matrix.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[-1] < 2:
        raise ConfigError(f"{name} needs at least 2 columns, got {arr.shape[-1]}")
    if require_square and arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{name} must be square for full 2-D stencils, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains NaN or Inf")
    return arr


def as_row(values, *, name: str = "row") -> np.ndarray:
    """Coerce to a 1-D float64 row of length >= 2."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ConfigError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size < 2:
        raise ConfigError(f"{name} needs at least 2 entries, got {arr.size}")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ConfigError(f"{name} must be positive and finite, got {value!r}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ConfigError(f"{name} must be nonnegative and finite, got {value!r}")
    return value


def check_int_in(value, name: str, *, low: int = 0, high: int | None = None) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < low or (high is not None and value > high):
        bound = f">= {low}" if high is None else f"in [{low}, {high}]"
        raise ConfigError(f"{name} must be {bound}, got {value}")
    return value


def check_token_matrix(x, *, vocab_size: int | None = None, name: str = "sequences") -> np.ndarray:
    """Validate a (n_sequences, seq_len) integer token-id matrix."""
    arr = np.asarray(x)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ConfigError(f"{name} must be (n_sequences, seq_len), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ConfigError(f"{name} must contain integer token ids")
    arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0:
        raise ConfigError(f"{name} contains negative token ids")
    if vocab_size is not None and arr.size and int(arr.max()) >= vocab_size:
        raise ConfigError(
            f"{name} contains token id {int(arr.max())} outside vocabulary of size {vocab_size}"
        )
    return arr
