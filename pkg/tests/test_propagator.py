import numpy as np
import pytest
from scipy.linalg import expm

from core.errors import ConvergenceError, GridMismatchError
from core.grid_core import GridField, PeriodicGrid
from core.propagator import (MultiProduct, Subdivision, certify_reference, compare_solutions, evolve_linear,
                             multiproduct_apply, reference_solve, step)
from core.symbol_presets import get_preset
from core.symbols import sample
from core.weyl import quantize


def _modes(grid):
    return GridField.from_function(grid, lambda x: np.cos(3 * x) + np.sin(5 * x))


def _heat_flow(grid, T):
    x = grid.axis_points()
    return np.exp(-9 * T) * np.cos(3 * x) + np.exp(-25 * T) * np.sin(5 * x)


def test_subdivision_validation():
    with pytest.raises(ValueError):
        Subdivision.create([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        Subdivision.create([0.1, 0.5])
    with pytest.raises(ValueError):
        Subdivision.uniform(0.5, 0)
    sub = Subdivision.uniform(0.5, 4)
    assert sub.knots == (0.0, 0.125, 0.25, 0.375, 0.5)
    assert np.isclose(sub.mesh_size, 0.125)
    assert sub.locate(0.0) == 0
    assert sub.locate(0.2) == 1
    assert sub.locate(0.5) == 3
    with pytest.raises(ValueError):
        sub.locate(0.6)


def test_step_rejects_backward_times():
    with pytest.raises(ValueError):
        step(get_preset('heat'), 0.5, 0.25, PeriodicGrid.create(1, 8))


@pytest.mark.parametrize('steps', [1, 4, 16, 64])
def test_heat_multiproduct_is_exact(steps):
    grid = PeriodicGrid.create(1, 64)
    mp = MultiProduct(get_preset('heat'), Subdivision.uniform(0.5, steps), grid)
    result = multiproduct_apply(mp, 0.5, _modes(grid))
    assert np.max(np.abs(result.values - _heat_flow(grid, 0.5))) <= 1e-11


def test_multiproduct_between_knots():
    grid = PeriodicGrid.create(1, 32)
    mp = MultiProduct(get_preset('heat'), Subdivision.uniform(0.5, 4), grid)
    assert np.allclose(mp.apply(0.3, _modes(grid)).values, _heat_flow(grid, 0.3))
    assert np.allclose(mp.apply(0.0, _modes(grid)).values, _modes(grid).values)


def test_zero_symbol_gives_identity_steps():
    grid = PeriodicGrid.create(1, 16)
    mp = MultiProduct(get_preset('zero'), Subdivision.uniform(1.0, 3), grid)
    assert np.allclose(mp.matrix(1.0), np.eye(16), atol=1e-12)


def test_multiproduct_checks_dimensions_and_grids():
    grid = PeriodicGrid.create(1, 16)
    with pytest.raises(GridMismatchError):
        MultiProduct(get_preset('heat-2d'), Subdivision.uniform(1.0, 2), grid)
    mp = MultiProduct(get_preset('heat'), Subdivision.uniform(1.0, 2), grid)
    with pytest.raises(GridMismatchError):
        mp.apply(1.0, _modes(PeriodicGrid.create(1, 8)))


def test_exact_multiplier_reference():
    grid = PeriodicGrid.create(1, 32)
    solution, info = reference_solve(get_preset('heat'), 0.5, _modes(grid), 1e-10)
    assert info.solver == 'exact_multiplier'
    assert np.allclose(solution.values, _heat_flow(grid, 0.5), atol=1e-12)


def test_time_dependent_heat_reference():
    grid = PeriodicGrid.create(1, 16)
    solution, _ = reference_solve(get_preset('heat-linear-time'), 0.5, _modes(grid), 1e-10)
    # int_0^T (1 + t) dt = T + T^2 / 2
    x, weight = grid.axis_points(), 0.5 + 0.125
    expected = np.exp(-9 * weight) * np.cos(3 * x) + np.exp(-25 * weight) * np.sin(5 * x)
    assert np.allclose(solution.values, expected, atol=1e-9)


@pytest.mark.parametrize('method', ['magnus', 'method_of_lines', 'rk4'])
def test_integrators_reproduce_a_constant_generator(method):
    generator = lambda t: -np.diag([1.0, 2.0, 3.0])
    U, _, _, _ = evolve_linear(generator, 0.0, 0.5, np.eye(3), 1e-10, method=method)
    assert np.allclose(U, np.diag(np.exp(-0.5 * np.array([1.0, 2.0, 3.0]))))


def test_certified_reference_for_a_curved_symbol():
    grid = PeriodicGrid.create(1, 16)
    data = _modes(grid).flat().reshape(-1, 1)
    outputs, info = certify_reference(get_preset('curved-1d'), grid, [0.125, 0.25], data, 1e-8)
    assert info.certified
    assert info.solver == 'magnus+method_of_lines'
    assert len(outputs) == 2
    assert np.linalg.norm(outputs[1]) < np.linalg.norm(outputs[0]) < np.linalg.norm(data)


def test_separable_reference_runs_in_integrated_time():
    grid = PeriodicGrid.create(1, 16)
    rough = get_preset('holder-half-rough')
    data = _modes(grid).flat().reshape(-1, 1)
    (output,), info = certify_reference(rough, grid, [0.3], data, 1e-9)
    base = quantize(sample(get_preset('curved-1d'), 0.0, grid)).matrix()
    assert info.certified
    assert np.allclose(output, expm(-rough.time_change(0.3) * base) @ data, atol=1e-7)


def test_disagreeing_solvers_raise():
    with pytest.raises(ConvergenceError):
        compare_solutions([np.ones(4)], [np.ones(4) * 1.1], 1e-8, ('a', 'b'))
