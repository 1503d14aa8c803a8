"""Stencil and DFT oracle tests for the grid operators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pde_attention.errors import ConfigError
from pde_attention.grid import (
    AxisMode,
    BoundaryCondition,
    GradScheme,
    dft_row,
    gradient_1d,
    idft_row,
    laplacian_1d,
    laplacian_apply,
    laplacian_eigenvalues,
    masked_laplacian_rows,
)

EPS = np.finfo(np.float64).eps

rows_01 = hnp.arrays(
    np.float64,
    st.integers(min_value=2, max_value=32),
    elements=st.floats(0.0, 1.0, allow_nan=False),
)


def _brute_laplacian_row(row, bc):
    """Independent 3-point stencil: explicit python loop, explicit neighbors."""
    t = len(row)
    out = np.zeros(t)
    for j in range(t):
        if bc == "periodic":
            left, right = row[(j - 1) % t], row[(j + 1) % t]
        else:
            left = row[j - 1] if j > 0 else row[j]
            right = row[j + 1] if j < t - 1 else row[j]
        out[j] = left - 2.0 * row[j] + right
    return out


def _brute_laplacian_2d(field, bc):
    """Independent 5-point stencil sweep for the full 2-D mode."""
    n = field.shape[0]
    out = np.zeros_like(field)
    for i in range(n):
        for j in range(n):
            acc = -4.0 * field[i, j]
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ii, jj = i + di, j + dj
                if bc == "periodic":
                    acc += field[ii % n, jj % n]
                else:
                    ii = min(max(ii, 0), n - 1)
                    jj = min(max(jj, 0), n - 1)
                    acc += field[ii, jj]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# laplacian_1d


def test_laplacian_one_hot_periodic():
    np.testing.assert_array_equal(
        laplacian_1d([1.0, 0.0, 0.0, 0.0], "periodic"), [-2.0, 1.0, 0.0, 1.0]
    )


def test_laplacian_one_hot_zero_flux():
    np.testing.assert_array_equal(
        laplacian_1d([1.0, 0.0, 0.0, 0.0], "zero_flux"), [-1.0, 1.0, 0.0, 0.0]
    )


def test_laplacian_uniform_row_is_exactly_zero():
    for bc in BoundaryCondition:
        out = laplacian_1d(np.full(7, 0.3), bc)
        assert np.all(out == 0.0)


@given(rows_01, st.sampled_from(["periodic", "zero_flux"]))
@settings(max_examples=60, deadline=None)
def test_laplacian_conserves_mass(row, bc):
    out = laplacian_1d(row, bc)
    assert abs(out.sum()) <= 8 * row.size * EPS


@given(rows_01, st.sampled_from(["periodic", "zero_flux"]))
@settings(max_examples=40, deadline=None)
def test_laplacian_matches_brute_force_stencil(row, bc):
    np.testing.assert_allclose(laplacian_1d(row, bc), _brute_laplacian_row(row, bc), atol=1e-14)


@given(rows_01, rows_01.filter(lambda r: True), st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_laplacian_linearity(x, y, a, b):
    if x.size != y.size:
        y = np.resize(y, x.size)
    lhs = laplacian_1d(a * x + b * y, "periodic")
    rhs = a * laplacian_1d(x, "periodic") + b * laplacian_1d(y, "periodic")
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


@pytest.mark.parametrize("t,k", [(8, 1), (8, 3), (12, 5), (16, 8)])
def test_laplacian_cosine_modes_are_eigenvectors(t, k):
    lam = laplacian_eigenvalues(t)[k]
    mode = np.cos(2 * np.pi * k * np.arange(t) / t)
    np.testing.assert_allclose(laplacian_1d(mode, "periodic"), -lam * mode, atol=1e-10)


def test_laplacian_rejects_short_rows():
    with pytest.raises(ConfigError):
        laplacian_1d([1.0])
    with pytest.raises(ConfigError):
        laplacian_1d([1.0, 2.0], bc="reflecting")


# ---------------------------------------------------------------------------
# laplacian_apply


def test_laplacian_apply_uniform_field_zero():
    field = np.full((5, 5), 0.2)
    for mode in AxisMode:
        assert np.all(laplacian_apply(field, mode, "periodic") == 0.0)


def test_laplacian_apply_per_row_matches_row_operator():
    rng = np.random.default_rng(0)
    field = rng.random((6, 9))
    out = laplacian_apply(field, "per_row_1d", "zero_flux")
    for i in range(6):
        np.testing.assert_allclose(out[i], laplacian_1d(field[i], "zero_flux"), atol=1e-14)


@pytest.mark.parametrize("bc", ["periodic", "zero_flux"])
def test_laplacian_apply_full_2d_matches_brute_force(bc):
    rng = np.random.default_rng(1)
    field = rng.random((7, 7))
    np.testing.assert_allclose(
        laplacian_apply(field, "full_2d", bc), _brute_laplacian_2d(field, bc), atol=1e-13
    )


def test_laplacian_apply_full_2d_requires_square():
    with pytest.raises(ConfigError):
        laplacian_apply(np.zeros((3, 5)), "full_2d")


def test_laplacian_apply_full_2d_conserves_total_mass():
    rng = np.random.default_rng(2)
    field = rng.random((8, 8))
    for bc in BoundaryCondition:
        assert abs(laplacian_apply(field, "full_2d", bc).sum()) <= 8 * field.size * EPS


# ---------------------------------------------------------------------------
# masked laplacian (zero flux at an arbitrary support frontier)


def test_masked_laplacian_full_support_equals_zero_flux():
    rng = np.random.default_rng(3)
    field = rng.random((4, 8))
    full = np.ones_like(field, dtype=bool)
    np.testing.assert_allclose(
        masked_laplacian_rows(field, full),
        laplacian_apply(field, "per_row_1d", "zero_flux"),
        atol=1e-14,
    )


def test_masked_laplacian_does_not_cross_frontier():
    # causal-style support: row i sees positions 0..i
    t = 6
    field = np.triu(np.ones((t, t))).T / np.arange(1, t + 1)[:, None]  # row-stochastic lower tri
    support = np.tril(np.ones((t, t), dtype=bool))
    out = masked_laplacian_rows(field, support)
    assert np.all(out[~support] == 0.0)
    # mass conserved within each row's support
    np.testing.assert_allclose(out.sum(axis=1), 0.0, atol=8 * t * EPS)


def test_masked_laplacian_isolated_cell_is_fixed_point():
    field = np.zeros((1, 7))
    field[0, 4] = 1.0
    support = np.zeros((1, 7), dtype=bool)
    support[0, 4] = True
    assert np.all(masked_laplacian_rows(field, support) == 0.0)


# ---------------------------------------------------------------------------
# gradient_1d


def test_gradient_central_periodic():
    np.testing.assert_allclose(
        gradient_1d([0.0, 1.0, 2.0, 3.0], "periodic", "central"), [-1.0, 1.0, 1.0, -1.0]
    )


def test_gradient_upwind_periodic():
    np.testing.assert_allclose(
        gradient_1d([0.0, 1.0, 2.0, 3.0], "periodic", "upwind"), [-3.0, 1.0, 1.0, 1.0]
    )


def test_gradient_zero_flux_mirrors_edges():
    # mirrored neighbors: central edge slopes are halved, upwind edge slope is 0
    np.testing.assert_allclose(
        gradient_1d([0.0, 1.0, 2.0, 3.0], "zero_flux", "central"), [0.5, 1.0, 1.0, 0.5]
    )
    np.testing.assert_allclose(
        gradient_1d([0.0, 1.0, 2.0, 3.0], "zero_flux", "upwind"), [0.0, 1.0, 1.0, 1.0]
    )


@given(rows_01)
@settings(max_examples=30, deadline=None)
def test_gradient_uniform_row_is_zero(row):
    uniform = np.full(row.size, 0.7)
    for scheme in GradScheme:
        assert np.all(gradient_1d(uniform, "periodic", scheme) == 0.0)


def test_gradient_rejects_bad_scheme():
    with pytest.raises(ConfigError):
        gradient_1d([0.0, 1.0], scheme="downwind")


# ---------------------------------------------------------------------------
# dft_row / spectrum


def test_dft_uniform_row_concentrates_at_mode_zero():
    t, c = 8, 0.25
    spectrum = dft_row(np.full(t, c))
    np.testing.assert_allclose(spectrum.coefficients[0], t * c, atol=1e-12)
    np.testing.assert_allclose(spectrum.coefficients[1:], 0.0, atol=1e-12)


def test_dft_cosine_mode_energy_at_plus_minus_k():
    t, k = 8, 1
    spectrum = dft_row(np.cos(2 * np.pi * k * np.arange(t) / t))
    mags = np.abs(spectrum.coefficients)
    np.testing.assert_allclose(mags[k], t / 2, atol=1e-10)
    np.testing.assert_allclose(mags[t - k], t / 2, atol=1e-10)
    others = np.delete(mags, [k, t - k])
    np.testing.assert_allclose(others, 0.0, atol=1e-10)


@given(rows_01)
@settings(max_examples=40, deadline=None)
def test_dft_round_trip(row):
    np.testing.assert_allclose(idft_row(dft_row(row)), row, atol=1e-10)


@given(rows_01)
@settings(max_examples=30, deadline=None)
def test_dft_conjugate_symmetry_for_real_rows(row):
    coef = dft_row(row).coefficients
    t = row.size
    for k in range(1, t):
        np.testing.assert_allclose(coef[k], np.conj(coef[t - k]), atol=1e-10)


@given(rows_01)
@settings(max_examples=30, deadline=None)
def test_dft_matches_numpy_fft(row):
    # numpy's FFT is an independent implementation of the same transform
    np.testing.assert_allclose(dft_row(row).coefficients, np.fft.fft(row), atol=1e-9)


@given(rows_01)
@settings(max_examples=40, deadline=None)
def test_dft_diagonalizes_periodic_laplacian(row):
    spectrum = dft_row(row)
    lap_spectrum = dft_row(laplacian_1d(row, "periodic"))
    np.testing.assert_allclose(
        lap_spectrum.coefficients, -spectrum.mode_eigenvalues * spectrum.coefficients, atol=1e-9
    )


def test_laplacian_eigenvalue_range():
    for t in (2, 3, 4, 7, 64):
        lam = laplacian_eigenvalues(t)
        assert lam[0] == 0.0
        assert np.all(lam[1:] > 0.0)
        assert lam.max() <= 4.0 + 1e-12


def test_eigenvalues_reject_tiny_grid():
    with pytest.raises(ConfigError):
        laplacian_eigenvalues(1)
