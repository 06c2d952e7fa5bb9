import numpy as np
import pytest

from core.errors import ConvergenceError, GridMismatchError
from core.grid_core import GridField, PeriodicGrid
from core.symbol_presets import CURVED_PRINCIPAL, get_preset, random_trig_symbol
from core.symbols import (SampledSymbol, exp_symbol, multiplication_symbol, sample, symbol_axes,
                          trig_polynomial_symbol)
from core.weyl import (MatrixStep, SobolevStep, amplitude_operator_matrix, amplitude_to_weyl, cross_check_norm,
                       moyal_compose, operator_norm, quantize, sample_amplitude)


def test_unit_symbol_quantizes_to_identity():
    grid = PeriodicGrid.create(1, 16)
    op = quantize(SampledSymbol(grid, np.ones((32, 32))))
    assert np.allclose(op.matrix(), np.eye(16), atol=1e-12)


def test_heat_step_is_a_fourier_multiplier():
    grid = PeriodicGrid.create(1, 32)
    op = quantize(exp_symbol(get_preset('heat'), 0.0, 0.1, grid))
    u = GridField.from_function(grid, lambda x: np.cos(3 * x) + np.sin(5 * x))
    expected = np.exp(-0.9) * np.cos(3 * grid.axis_points()) + np.exp(-2.5) * np.sin(5 * grid.axis_points())
    assert np.allclose(op.apply(u).values, expected)


def test_multiplication_symbol_acts_pointwise():
    grid = PeriodicGrid.create(1, 16)
    op = quantize(sample(multiplication_symbol(lambda x: np.cos(x[0])), 0.0, grid))
    assert np.allclose(op.matrix(), np.diag(np.cos(grid.axis_points())), atol=1e-12)


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_fast_and_dense_paths_agree(seed):
    grid = PeriodicGrid.create(1, 16)
    symbol = sample(random_trig_symbol(np.random.default_rng(seed)), 0.0, grid)
    fast, dense = quantize(symbol, 'fft').matrix(), quantize(symbol, 'dense').matrix()
    assert np.linalg.norm(fast - dense) <= 1e-10 * np.linalg.norm(dense)


def test_fast_and_dense_paths_agree_in_two_dimensions():
    grid = PeriodicGrid.create(2, 8)
    symbol = sample(get_preset('curved-2d'), 0.0, grid)
    fast, dense = quantize(symbol, 'fft').matrix(), quantize(symbol, 'dense').matrix()
    assert np.linalg.norm(fast - dense) <= 1e-10 * np.linalg.norm(dense)


def test_real_symbol_gives_hermitian_operator():
    grid = PeriodicGrid.create(1, 16)
    matrix = quantize(sample(trig_polynomial_symbol(CURVED_PRINCIPAL), 0.0, grid)).matrix()
    assert np.allclose(matrix, matrix.conj().T)


def test_apply_matches_matrix():
    grid = PeriodicGrid.create(1, 16)
    op = quantize(exp_symbol(get_preset('curved-1d'), 0.0, 0.05, grid))
    u = GridField.random(grid, np.random.default_rng(5))
    assert np.allclose(op.apply(u).flat(), op.matrix() @ u.flat())


def test_operator_norm_methods_agree_on_a_diagonal_matrix():
    grid = PeriodicGrid.create(1, 8)
    step = MatrixStep(grid, np.diag([5.0, 4.0, 3.0, 2.0, 1.0, 1.0, 0.5, 0.1]))
    power = operator_norm([step], grid=grid, method='power', tol=1e-12)
    svd = operator_norm([step], grid=grid, method='svd')
    assert np.isclose(svd.value, 5.0)
    assert np.isclose(power.value, 5.0, rtol=1e-6)
    assert power.converged


def test_sobolev_weights_cancel_in_the_norm():
    grid = PeriodicGrid.create(1, 16)
    estimate = operator_norm([SobolevStep(grid, 1.0)], s_in=1.0, s_out=0.0, grid=grid, method='svd')
    assert np.isclose(estimate.value, 1.0)


def test_empty_chain_is_rejected():
    with pytest.raises(ValueError):
        operator_norm([], grid=PeriodicGrid.create(1, 8))


def _cos_and_xi(grid):
    x, xi = symbol_axes(grid)
    return (SampledSymbol(grid, np.broadcast_to(np.cos(x[0]), (32, 32))),
            SampledSymbol(grid, np.broadcast_to(xi[0], (32, 32))), x[0], xi[0])


@pytest.mark.parametrize('terms', [1, 2, 3])
def test_moyal_product_of_cos_and_xi(terms):
    # cos(x) # xi = cos(x) xi + {cos, xi} / 2i, higher terms vanish
    grid = PeriodicGrid.create(1, 16)
    a, b, x, xi = _cos_and_xi(grid)
    product = moyal_compose(a, b, terms)
    assert np.allclose(product.values, np.cos(x) * xi - 0.5j * np.sin(x), atol=1e-10)


def test_moyal_product_checks_arguments():
    grid = PeriodicGrid.create(1, 16)
    a, b, x, xi = _cos_and_xi(grid)
    assert np.allclose(moyal_compose(a, b, 0).values, np.cos(x) * xi)
    with pytest.raises(ValueError):
        moyal_compose(a, b, 4)
    with pytest.raises(GridMismatchError):
        moyal_compose(a, SampledSymbol(PeriodicGrid.create(1, 8), np.ones((16, 16))))


def test_amplitude_operators():
    grid = PeriodicGrid.create(1, 16)
    x = grid.axis_points()
    assert np.allclose(amplitude_operator_matrix(sample_amplitude(lambda x, y, xi: 1.0 + 0 * xi, grid)), np.eye(16))
    assert np.allclose(amplitude_operator_matrix(sample_amplitude(lambda x, y, xi: np.cos(x) + 0 * xi, grid)),
                       np.diag(np.cos(x)))


def test_amplitude_to_weyl():
    grid = PeriodicGrid.create(1, 16)
    _, _, x, xi = _cos_and_xi(grid)
    symmetric = amplitude_to_weyl(sample_amplitude(lambda x, y, xi: (np.cos(x) + np.cos(y)) * xi, grid), 2)
    assert np.allclose(symmetric.values, 2 * np.cos(x) * xi, atol=1e-10)
    left = amplitude_to_weyl(sample_amplitude(lambda x, y, xi: np.cos(x) * xi + 0 * y, grid), 1)
    assert np.allclose(left.values, np.cos(x) * xi - 0.5j * np.sin(x), atol=1e-10)
    with pytest.raises(ValueError):
        amplitude_to_weyl(sample_amplitude(lambda x, y, xi: xi + 0 * x, grid), 3)


def test_adjoint_apply_matches_the_conjugate_transpose():
    grid = PeriodicGrid.create(1, 16)
    op = quantize(sample(random_trig_symbol(np.random.default_rng(5)), 0.0, grid))
    u = GridField.random(grid, np.random.default_rng(6))
    assert np.allclose(op.adjoint_apply(u).flat(), op.matrix().conj().T @ u.flat())


def test_power_iteration_is_the_default_and_auto_is_gone():
    grid = PeriodicGrid.create(1, 8)
    step = MatrixStep(grid, np.diag([2.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.1]))
    assert operator_norm([step], grid=grid).method == 'power'
    with pytest.raises(ValueError):
        operator_norm([step], grid=grid, method='auto')


def test_power_iteration_reports_a_stalled_run():
    grid = PeriodicGrid.create(1, 8)
    step = MatrixStep(grid, np.diag([1.0, 0.999, 0.998, 0.5, 0.5, 0.5, 0.5, 0.1]))
    estimate = operator_norm([step], grid=grid, max_iter=2)
    assert not estimate.converged
    assert estimate.iterations == 2
    assert estimate.value <= 1.0 + 1e-12
    with pytest.raises(ConvergenceError):
        operator_norm([step], grid=grid, max_iter=2, strict=True)


def test_cross_check_matches_dense_svd_on_a_random_operator():
    grid = PeriodicGrid.create(1, 16)
    rng = np.random.default_rng(3)
    matrix = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    check = cross_check_norm([MatrixStep(grid, matrix)], grid=grid, tol=1e-12, max_iter=5000)
    assert check.power.converged
    assert np.isclose(check.svd, np.linalg.norm(matrix, 2))
    assert check.relative_gap < 1e-6
