import numpy as np
import pytest

from core.change_of_variables import (TransitionMap, bump_cutoff, check_pullback_residual, differential_coefficients,
                                      kappa_tilde, pullback_symbol, transported_weyl_symbol)
from core.errors import OverlapError
from core.grid_core import PeriodicGrid
from core.symbol_presets import get_preset
from core.symbols import exp_symbol_function, sample, symbol_axes


def _second_derivative():
    return [lambda x: np.zeros_like(x), lambda x: np.zeros_like(x), lambda x: -np.ones_like(x)]


def test_kappa_tilde_of_an_affine_map():
    kappa = TransitionMap.affine(slope=1.25)
    x = np.array([1.0, 2.0, 3.0])
    value = kappa_tilde(kappa, x, np.array([2.5, 2.0, 0.5]))
    assert value.shape == (3, 1, 1)
    assert np.allclose(value, 0.8)


def test_kappa_tilde_diagonal_limit_is_the_inverse_derivative():
    kappa = TransitionMap.generic(0.3)
    x = np.linspace(0.5, 5.5, 11)
    _, first, _ = kappa.inverse_derivatives(x)
    assert np.allclose(kappa_tilde(kappa, x, x)[..., 0, 0], first)


def test_points_outside_the_overlap_raise():
    kappa = TransitionMap.identity()
    kappa.overlap = (0.0, 1.0)
    with pytest.raises(OverlapError):
        kappa_tilde(kappa, np.array([0.5]), np.array([1.5]))


def test_generic_map_inverse():
    kappa = TransitionMap.generic(0.3)
    x = np.linspace(0.0, 2 * np.pi, 13)
    assert np.allclose(kappa.inverse(kappa.forward(x)), x, atol=1e-12)
    with pytest.raises(ValueError):
        TransitionMap.generic(1.0)
    with pytest.raises(ValueError):
        TransitionMap.create('shear')


def test_identity_pullback_has_no_first_order_term():
    grid = PeriodicGrid.create(1, 16)
    p = exp_symbol_function(get_preset('curved-1d'), 0.0, 0.125)
    chi = bump_cutoff()
    order0 = pullback_symbol(TransitionMap.identity(), p, chi, 0, grid)
    order1 = pullback_symbol(TransitionMap.identity(), p, chi, 1, grid)
    assert np.allclose(order0.values, order1.values)
    with pytest.raises(ValueError):
        pullback_symbol(TransitionMap.identity(), p, chi, 2, grid)


@pytest.mark.parametrize('kappa, factor', [(TransitionMap.identity(), 1.0), (TransitionMap.affine(1.25), 1.5625)])
def test_transported_second_derivative(kappa, factor):
    grid = PeriodicGrid.create(1, 16)
    xi = symbol_axes(grid)[1][0]
    symbol = transported_weyl_symbol(kappa, _second_derivative(), grid)
    assert np.allclose(symbol.values, np.broadcast_to(factor * xi ** 2, symbol.values.shape))


def test_bump_cutoff():
    chi = bump_cutoff(np.pi, 0.35 * np.pi)
    values = chi(np.array([np.pi, np.pi + 0.35 * np.pi, 0.1, np.pi + 0.2]))
    assert np.isclose(values[0], 1.0)
    assert values[1] == 0.0 and values[2] == 0.0
    assert 0.0 < values[3] < 1.0


def test_identity_pullback_residual_shrinks_with_h():
    grid = PeriodicGrid.create(1, 16)
    h_list = [0.25, 0.125, 0.0625, 0.03125]
    report = check_pullback_residual(TransitionMap.identity(), get_preset('curved-1d'), bump_cutoff(), h_list, grid)
    assert len(report.rows) == 8
    assert report.rows[0].metric == 'pullback-residual-identity'
    assert [row.scale for row in report.rows[:4]] == h_list
    residuals = [row.error for row in report.rows[:4]]
    assert residuals[-1] < residuals[0]
    # the identity has no first-order term, so both residuals coincide
    assert residuals == report.order0_values
    assert not report.improved


def test_affine_and_generic_maps_carry_chart_overlaps():
    affine = TransitionMap.affine(1.25)
    assert np.allclose(affine.overlap, (np.pi - 1.25 * np.pi, np.pi + 1.25 * np.pi))
    assert np.allclose(TransitionMap.generic(0.3).overlap, (0.0, 2 * np.pi))
    with pytest.raises(OverlapError):
        kappa_tilde(affine, np.array([1.0]), np.array([3 * np.pi]))
    narrow = TransitionMap.affine(1.25, half_width=1.0)
    p = exp_symbol_function(get_preset('curved-1d'), 0.0, 0.125)
    with pytest.raises(OverlapError):
        pullback_symbol(narrow, p, bump_cutoff(), 0, PeriodicGrid.create(1, 16))
    with pytest.raises(ValueError):
        TransitionMap.generic(0.3, half_width=0.0)


def test_differential_coefficients_reproduce_a_differential_symbol():
    grid = PeriodicGrid.create(1, 16)
    q = get_preset('curved-1d')
    coefficients = differential_coefficients(q, 0.0, grid.box_length)
    assert coefficients is not None
    transported = transported_weyl_symbol(TransitionMap.identity(), coefficients, grid)
    assert np.allclose(transported.values, sample(q, 0.0, grid).values, atol=1e-9)


def test_differential_coefficients_reject_non_polynomial_symbols():
    p = exp_symbol_function(get_preset('curved-1d'), 0.0, 0.125)
    assert differential_coefficients(p, 0.0, 2 * np.pi) is None


def test_generic_pullback_first_order_term_strictly_helps():
    grid = PeriodicGrid.create(1, 64)
    h_list = [2.0 ** -k for k in range(3, 8)]
    report = check_pullback_residual(TransitionMap.generic(0.3), get_preset('curved-1d'), bump_cutoff(),
                                     h_list, grid)
    assert report.improved
    assert report.rows[len(h_list) - 1].error < report.order0_values[-1]
    assert report.fit.slope >= 0.8
