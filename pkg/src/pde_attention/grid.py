"""Discrete operators on attention fields.

An attention field is a matrix whose rows are per-query distributions over
key positions. The position axis is treated as a grid with unit spacing, so
the 1-D Laplacian along a row is the 3-point stencil
``row[j-1] - 2*row[j] + row[j+1]`` and the full 2-D variant is the 5-point
stencil over both axes. Two boundary treatments are supported: ``periodic``
(wrap-around) and ``zero_flux`` (missing neighbors mirror the edge value,
i.e. homogeneous Neumann), both of which make every stencil row sum to zero
so that diffusion conserves row mass.

A naive O(T^2) discrete Fourier transform is provided as the spectral
oracle: for the periodic Laplacian, ``dft(lap(row))[k] == -lam_k * dft(row)[k]``
with eigenvalues ``lam_k = 2 - 2*cos(2*pi*k/T)``.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .validation import as_float_field, as_row


class BoundaryCondition(str, enum.Enum):
    PERIODIC = "periodic"
    ZERO_FLUX = "zero_flux"


class AxisMode(str, enum.Enum):
    PER_ROW_1D = "per_row_1d"
    FULL_2D = "full_2d"


class GradScheme(str, enum.Enum):
    CENTRAL = "central"
    UPWIND = "upwind"


def coerce_enum(enum_cls, value, name):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ConfigError(f"{name} must be one of {{{allowed}}}, got {value!r}") from None


_coerce = coerce_enum


def _neighbors(values: np.ndarray, bc: BoundaryCondition, axis: int = -1):
    """Left and right neighbor arrays along ``axis`` under the given boundary."""
    if bc is BoundaryCondition.PERIODIC:
        left = np.roll(values, 1, axis=axis)
        right = np.roll(values, -1, axis=axis)
    else:  # zero_flux: missing neighbors mirror the edge value
        left = np.roll(values, 1, axis=axis)
        right = np.roll(values, -1, axis=axis)
        first = [slice(None)] * values.ndim
        last = [slice(None)] * values.ndim
        first[axis] = 0
        last[axis] = -1
        left[tuple(first)] = values[tuple(first)]
        right[tuple(last)] = values[tuple(last)]
    return left, right


def laplacian_rows(values: np.ndarray, bc=BoundaryCondition.PERIODIC, axis: int = -1) -> np.ndarray:
    """3-point Laplacian along ``axis`` for an array of stacked rows."""
    bc = _coerce(BoundaryCondition, bc, "bc")
    left, right = _neighbors(np.asarray(values, dtype=np.float64), bc, axis)
    return left + right - 2.0 * np.asarray(values, dtype=np.float64)


def laplacian_1d(row, bc=BoundaryCondition.PERIODIC) -> np.ndarray:
    """Discrete 1-D Laplacian of a single row (unit grid spacing)."""
    return laplacian_rows(as_row(row), bc)


def laplacian_apply(values, mode=AxisMode.PER_ROW_1D, bc=BoundaryCondition.PERIODIC) -> np.ndarray:
    """Apply the Laplacian to a field, row-wise or as the 5-point 2-D stencil.

    ``per_row_1d`` treats each row as an independent 1-D grid (the default
    throughout: rows are distributions over key positions). ``full_2d``
    couples both axes and requires a square field.
    """
    mode = _coerce(AxisMode, mode, "mode")
    bc = _coerce(BoundaryCondition, bc, "bc")
    arr = as_float_field(values, require_square=(mode is AxisMode.FULL_2D))
    out = laplacian_rows(arr, bc, axis=-1)
    if mode is AxisMode.FULL_2D:
        out = out + laplacian_rows(arr, bc, axis=-2)
    return out


def masked_laplacian_rows(values: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Row-wise Laplacian restricted to a boolean support mask.

    A neighbor outside the support mirrors the center value (zero flux at
    the mask frontier), so the operator conserves mass over the support and
    never moves mass across it. Covers contiguous supports (causal
    prefixes) and non-contiguous ones (band-plus-global patterns); isolated
    cells are fixed points. The operator is symmetric on the masked
    subspace, hence self-adjoint.
    """
    v = np.asarray(values, dtype=np.float64)
    m = np.asarray(support, dtype=bool)
    try:
        m = np.broadcast_to(m, v.shape)
    except ValueError:
        raise ConfigError(f"support shape {m.shape} not broadcastable to values shape {v.shape}") from None
    left_ok = np.zeros_like(m)
    left_ok[..., 1:] = m[..., :-1]
    right_ok = np.zeros_like(m)
    right_ok[..., :-1] = m[..., 1:]
    left = np.where(left_ok, np.roll(v, 1, axis=-1), v)
    right = np.where(right_ok, np.roll(v, -1, axis=-1), v)
    return (left + right - 2.0 * v) * m


def gradient_rows(values: np.ndarray, bc=BoundaryCondition.PERIODIC,
                  scheme=GradScheme.CENTRAL, axis: int = -1) -> np.ndarray:
    """First-difference approximation of the spatial derivative along rows."""
    bc = _coerce(BoundaryCondition, bc, "bc")
    scheme = _coerce(GradScheme, scheme, "scheme")
    v = np.asarray(values, dtype=np.float64)
    left, right = _neighbors(v, bc, axis)
    if scheme is GradScheme.CENTRAL:
        return (right - left) / 2.0
    return v - left  # upwind: backward difference, for positive transport speed


def gradient_1d(row, bc=BoundaryCondition.PERIODIC, scheme=GradScheme.CENTRAL) -> np.ndarray:
    """Discrete 1-D gradient of a single row."""
    return gradient_rows(as_row(row), bc, scheme)


def laplacian_eigenvalues(t: int) -> np.ndarray:
    """Eigenvalues ``lam_k = 2 - 2*cos(2*pi*k/T)`` of the periodic 1-D Laplacian."""
    if t < 2:
        raise ConfigError(f"grid size must be >= 2, got {t}")
    k = np.arange(t)
    lam = 2.0 - 2.0 * np.cos(2.0 * np.pi * k / t)
    lam[0] = 0.0
    return lam


@dataclass
class Spectrum:
    """DFT coefficients of a row together with the matching Laplacian eigenvalues."""

    coefficients: np.ndarray  # complex, length T
    mode_eigenvalues: np.ndarray  # lam_k, length T

    def __len__(self) -> int:
        return len(self.coefficients)


@functools.lru_cache(maxsize=8)
def _dft_matrix(t: int) -> np.ndarray:
    j = np.arange(t)
    return np.exp(-2j * np.pi * np.outer(j, j) / t)


def dft_row(row) -> Spectrum:
    """Naive O(T^2) discrete Fourier transform of a single row.

    Deliberately not an FFT: this is the independent spectral oracle used to
    cross-check mode-decay identities, and desk-scale T keeps it cheap.
    """
    r = as_row(row)
    coeff = _dft_matrix(r.size) @ r.astype(np.complex128)
    return Spectrum(coefficients=coeff, mode_eigenvalues=laplacian_eigenvalues(r.size))


def idft_row(spectrum: Spectrum) -> np.ndarray:
    """Invert :func:`dft_row`; returns the real part of the reconstruction."""
    t = len(spectrum)
    back = np.conj(_dft_matrix(t)) @ np.asarray(spectrum.coefficients, dtype=np.complex128)
    return np.real(back) / t
