import numpy as np
import pytest

from core.errors import GridMismatchError
from core.grid_core import (GridField, PeriodicGrid, apply_sobolev_weight, check_same_grid, fourier_forward,
                            fourier_inverse, inner_product, l2_norm, sobolev_norm, spectral_derivative,
                            trig_interpolate, trig_interpolation_matrix, weighted_l2_norm)


@pytest.mark.parametrize('points', [7, 6, 0])
def test_grid_rejects_odd_or_tiny_sizes(points):
    with pytest.raises(ValueError):
        PeriodicGrid.create(1, points)


def test_grid_axes():
    grid = PeriodicGrid.create(1, 16)
    assert grid.shape == (16,)
    assert np.isclose(grid.spacing, 2 * np.pi / 16)
    assert len(grid.midpoint_axis()) == 32
    assert np.isclose(grid.midpoint_axis()[1], grid.spacing / 2)
    assert np.allclose(grid.frequency_axis(), np.arange(-8, 8))
    assert np.allclose(grid.refined_frequency_axis(), np.arange(-16, 16) / 2)


def test_axis_points_feed_mesh_and_sampled_fields():
    grid = PeriodicGrid.create(1, 8)
    assert np.allclose(grid.axis_points(), np.arange(8) * np.pi / 4)
    (x,) = grid.mesh()
    assert np.allclose(x, grid.axis_points())
    field = GridField.from_function(grid, np.cos)
    assert np.allclose(field.values, np.cos(grid.axis_points()))


def test_fourier_transform_is_unitary():
    grid = PeriodicGrid.create(1, 32)
    field = GridField.random(grid, np.random.default_rng(3))
    coeffs = fourier_forward(field)
    assert np.isclose(np.sum(np.abs(coeffs.values) ** 2), np.sum(np.abs(field.values) ** 2))
    assert np.allclose(fourier_inverse(coeffs).values, field.values)


def test_sobolev_norm_of_a_single_mode():
    grid = PeriodicGrid.create(1, 16)
    field = GridField.from_function(grid, lambda x: np.exp(3j * x))
    base = np.sqrt(2 * np.pi)
    assert np.isclose(l2_norm(field), base)
    assert np.isclose(sobolev_norm(field, 0.0), base)
    assert np.isclose(sobolev_norm(field, 1.0), np.sqrt(10.0) * base)
    assert np.isclose(sobolev_norm(field, -2.0), base / 10.0)


def test_weighted_norm_and_inner_product():
    grid = PeriodicGrid.create(1, 16)
    ones = GridField.from_function(grid, lambda x: np.ones_like(x))
    weight = GridField.from_function(grid, lambda x: 4.0 + 0 * x)
    assert np.isclose(weighted_l2_norm(ones, weight), 2 * np.sqrt(2 * np.pi))
    assert np.isclose(inner_product(ones, ones), 2 * np.pi)
    with pytest.raises(ValueError):
        weighted_l2_norm(ones, GridField.from_function(grid, lambda x: np.cos(x)))


def test_grid_mismatch_is_reported():
    small, large = PeriodicGrid.create(1, 8), PeriodicGrid.create(1, 16)
    with pytest.raises(GridMismatchError):
        GridField.from_values(small, np.zeros(16))
    with pytest.raises(GridMismatchError):
        check_same_grid(GridField.random(small, np.random.default_rng(0)),
                        GridField.random(large, np.random.default_rng(0)))


def test_spectral_derivative_is_exact_for_trig_data():
    grid = PeriodicGrid.create(1, 32)
    x = grid.axis_points()
    assert np.allclose(spectral_derivative(np.sin(3 * x), grid.box_length), 3 * np.cos(3 * x))
    assert np.allclose(spectral_derivative(np.sin(3 * x), grid.box_length, 2), -9 * np.sin(3 * x))


def test_trig_interpolation():
    grid = PeriodicGrid.create(1, 16)
    nodes = grid.axis_points()
    assert np.allclose(trig_interpolation_matrix(16, grid.box_length, nodes), np.eye(16))
    points = np.random.default_rng(1).uniform(0, 2 * np.pi, 11)
    values = np.cos(2 * nodes) + 0.5 * np.sin(5 * nodes)
    assert np.allclose(trig_interpolate(values, grid.box_length, points), np.cos(2 * points) + 0.5 * np.sin(5 * points))


def test_sobolev_weight_multiplies_by_the_japanese_bracket():
    grid = PeriodicGrid.create(1, 32)
    u = GridField.from_function(grid, lambda x: np.cos(3 * x))
    weighted = apply_sobolev_weight(u, 1.0)
    assert np.allclose(weighted.values, np.sqrt(10.0) * u.values)
    assert np.allclose(apply_sobolev_weight(weighted, -1.0).values, u.values)
    assert apply_sobolev_weight(u, 0.0) is u
