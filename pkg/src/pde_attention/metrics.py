"""Scalar diagnostics for attention fields and model outputs.

Three field metrics track what pseudo-time evolution does to attention:

* smoothness  -- squared Frobenius norm of the Laplacian image ``|lap(A)|_F^2``
  (small = spatially smooth rows),
* consistency -- variance over all entries (small = entries agree),
* effective range -- mean over rows of the smallest contiguous window
  (wrapping when the field is periodic) holding at least a given fraction
  of the row's mass (large = attention reaches far).

``perplexity`` is the usual exponentiated mean cross-entropy of next-token
logits, computed with log-sum-exp stabilization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateFieldError
from .grid import AxisMode, BoundaryCondition, laplacian_apply
from .validation import as_float_field

# Relative slack applied to the mass threshold so exact-boundary windows
# (e.g. 9 cells of a uniform 10-cell row at mass 0.9) are not lost to
# floating-point rounding of the cumulative sums.
_MASS_SLACK = 1e-12


def _field_parts(a, default_bc=BoundaryCondition.PERIODIC):
    """Accept an AttentionField or a bare array; return (values, bc)."""
    bc = getattr(a, "bc", default_bc)
    values = getattr(a, "values", a)
    return as_float_field(values), BoundaryCondition(bc)


def smoothness(a, mode=AxisMode.PER_ROW_1D) -> float:
    """``|lap(A)|_F^2`` under the field's boundary condition."""
    values, bc = _field_parts(a)
    lap = laplacian_apply(values, mode, bc)
    return float(np.sum(lap * lap))


def consistency(a) -> float:
    """Population variance over all entries of the field."""
    values, _ = _field_parts(a)
    return float(np.var(values))


def effective_range(a, mass: float = 0.9) -> float:
    """Mean smallest window width (in tokens) holding ``mass`` of each row.

    Windows are contiguous runs of positions, taken modulo T when the field
    is periodic. Rows must be nonnegative with positive sums (attention-like
    mass distributions); anything else raises ``DegenerateFieldError``.
    """
    values, bc = _field_parts(a)
    if not 0.0 < mass <= 1.0:
        raise ConfigError(f"mass must be in (0, 1], got {mass}")
    if np.any(values < 0.0):
        raise DegenerateFieldError("effective_range needs nonnegative rows")
    totals = values.sum(axis=1)
    if np.any(totals <= 0.0):
        raise DegenerateFieldError("effective_range needs rows with positive mass")

    t = values.shape[1]
    wrap = bc is BoundaryCondition.PERIODIC
    widths = np.empty(values.shape[0], dtype=np.float64)
    starts = np.arange(t)
    for i, row in enumerate(values):
        theta = mass * totals[i] * (1.0 - _MASS_SLACK)
        prefix = np.concatenate(([0.0], np.cumsum(np.concatenate((row, row)) if wrap else row)))
        targets = prefix[starts] + theta
        idx = np.searchsorted(prefix, targets, side="left")
        w = idx - starts
        if not wrap:
            w = w[idx <= t]  # windows must fit inside the row
        widths[i] = max(int(w.min()), 1)
    return float(widths.mean())


@dataclass
class DynamicsMetrics:
    """The three field diagnostics, bundled for per-step trajectory records."""

    smoothness: float
    consistency: float
    effective_range: float

    @classmethod
    def from_field(cls, a, mode=AxisMode.PER_ROW_1D, mass: float = 0.9):
        try:
            rng = effective_range(a, mass)
        except DegenerateFieldError:
            rng = float("nan")  # raw PDE studies may leave the simplex
        return cls(smoothness(a, mode), consistency(a), rng)


def perplexity(logits, targets) -> float:
    """exp(mean cross-entropy) of integer targets under rows of logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ConfigError(f"logits must be a nonempty (n, vocab) matrix, got shape {z.shape}")
    if y.shape != (z.shape[0],):
        raise ConfigError(f"targets shape {y.shape} does not match logits rows {z.shape[0]}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ConfigError("targets must be integer token ids")
    if y.min() < 0 or y.max() >= z.shape[1]:
        raise ConfigError("targets out of vocabulary range")
    zmax = z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z - zmax).sum(axis=1)) + zmax[:, 0]
    ce = log_norm - z[np.arange(z.shape[0]), y]
    return float(np.exp(ce.mean()))
