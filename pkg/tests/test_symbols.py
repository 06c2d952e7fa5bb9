import numpy as np
import pytest

from core.errors import GridMismatchError
from core.grid_core import PeriodicGrid
from core.symbol_presets import get_preset
from core.symbols import (DyadicProfile, SampledSymbol, SymbolTerm, damping_uniformity_sweep, dissipation_symbol,
                          dissipation_symbol_sweep, exp_symbol, multiplication_symbol, poisson_bracket,
                          resolved_steps, sample, seminorms, separable_symbol, symbol_shape, trig_polynomial_symbol,
                          verify_ellipticity)
from core.sweeps import dyadic


def test_sample_heat_symbol():
    grid = PeriodicGrid.create(1, 16)
    sampled = sample(get_preset('heat'), 0.0, grid)
    assert sampled.values.shape == symbol_shape(grid) == (32, 32)
    eta = grid.refined_frequency_axis()
    assert np.allclose(sampled.values, np.broadcast_to(eta ** 2, (32, 32)))


def test_exp_symbol_at_zero_step_is_one():
    grid = PeriodicGrid.create(1, 16)
    p = exp_symbol(get_preset('curved-1d'), 0.0, 0.0, grid)
    assert np.all(p.values == 1.0)
    with pytest.raises(ValueError):
        exp_symbol(get_preset('curved-1d'), 0.0, -0.1, grid)


def test_curved_symbol_ellipticity_margin():
    grid = PeriodicGrid.create(1, 32)
    ok, margin = verify_ellipticity(get_preset('curved-1d'), 0.0, grid)
    assert ok
    assert np.isclose(margin, 0.5)


def test_holder_family_depends_on_time():
    grid = PeriodicGrid.create(1, 16)
    sym = get_preset('holder-half')
    assert sym.holder.alpha == 0.5
    early, late = sample(sym, 0.0, grid), sample(sym, 0.25, grid)
    x, eta = grid.midpoint_axis()[:, None], grid.refined_frequency_axis()[None, :]
    increment = (0.5 + 0.25 * np.sin(x)) * eta ** 2 + 0.5j * np.cos(x) * eta
    assert np.allclose(late.values - early.values, 0.5 * increment)


def test_dyadic_profile_integrates_to_its_antiderivative():
    profile = DyadicProfile(0.5, levels=6)
    assert profile.integral(0.0) == 0.0
    t, eps = 0.3, 1e-6
    assert np.isclose((profile.integral(t + eps) - profile.integral(t - eps)) / (2 * eps), profile(t), rtol=1e-6)


def test_dyadic_profile_bounds():
    profile = DyadicProfile(0.5)
    times = np.random.default_rng(2).uniform(0.0, 1.0, 200)
    values = np.array([profile(t) for t in times])
    assert np.all(values >= profile.lower_bound() > 0)
    assert np.isclose(profile(0.0), 2.0 - profile.lower_bound())
    for s, t in zip(times[::2], times[1::2]):
        assert abs(profile(t) - profile(s)) <= profile.holder_constant() * abs(t - s) ** 0.5
    with pytest.raises(ValueError):
        DyadicProfile(1.0)
    with pytest.raises(ValueError):
        DyadicProfile(0.5, amplitude=0.3)


def test_separable_symbol_scales_a_fixed_symbol():
    grid = PeriodicGrid.create(1, 16)
    rough = get_preset('holder-half-rough')
    (profile, _), = rough.time_profile
    base = sample(get_preset('curved-1d'), 0.0, grid)
    assert rough.holder.alpha == 0.5
    assert np.allclose(sample(rough, 0.3, grid).values, profile(0.3) * base.values)
    assert rough.time_change(0.3) == profile.integral(0.3)
    with pytest.raises(ValueError):
        separable_symbol(get_preset('holder-half'), DyadicProfile(0.5), 'nested')


def test_principal_part_must_be_real():
    with pytest.raises(ValueError):
        trig_polynomial_symbol([SymbolTerm(1j, power=(2,))])


def test_resolved_steps_drop_unresolved_h():
    grid = PeriodicGrid.create(1, 128)
    kept, dropped = resolved_steps(get_preset('curved-1d'), 0.0, grid, dyadic(4, 10))
    assert kept == dyadic(4, 7)
    assert dropped == dyadic(8, 10)


def test_multiplication_symbol_ignores_xi():
    grid = PeriodicGrid.create(1, 16)
    sampled = sample(multiplication_symbol(lambda x: np.cos(x[0])), 0.0, grid)
    assert np.allclose(sampled.values, np.cos(grid.midpoint_axis())[:, None])


def test_poisson_bracket_of_a_symbol_with_itself_vanishes():
    grid = PeriodicGrid.create(1, 16)
    a = sample(get_preset('curved-1d'), 0.0, grid)
    assert np.allclose(poisson_bracket(a, a).values, 0.0)


def test_sampled_symbol_arithmetic_checks_grids():
    a = SampledSymbol(PeriodicGrid.create(1, 8), np.ones((16, 16)))
    b = SampledSymbol(PeriodicGrid.create(1, 16), np.ones((32, 32)))
    assert np.allclose((a * a + a).values, 2.0)
    with pytest.raises(GridMismatchError):
        a + b


def test_dissipation_symbol_is_nonnegative_for_heat():
    grid = PeriodicGrid.create(1, 16)
    nu = dissipation_symbol(get_preset('heat'), 0.0, 0.1, grid)
    eta = grid.refined_frequency_axis()
    assert np.all(nu.values.real >= 0)
    assert np.allclose(nu.values[0], (1 - np.exp(-0.2 * eta ** 2)) / 0.1)


def test_heat_damping_is_uniform_in_h():
    grid = PeriodicGrid.create(1, 32)
    records = damping_uniformity_sweep(get_preset('heat'), 0.0, grid, [0.1, 0.01, 0.001], max_order=1)
    assert len(records) == 9
    assert all(np.isfinite(record.seminorm) for record in records)
    assert all(record.seminorm >= 1.0 - 1e-12 for record in records if record.exponent == 0.0)


def test_heat_dissipation_symbol_is_order_two():
    grid = PeriodicGrid.create(1, 32)
    for h, report in dissipation_symbol_sweep(get_preset('heat'), 0.0, grid, [0.1, 0.01], max_order=1):
        # (1 - e^{-2h xi^2}) / h <= 2 xi^2
        assert report.order == 2.0
        assert report.value((0,), (0,)) <= 2.0 + 1e-12


def test_seminorms_of_xi_squared():
    grid = PeriodicGrid.create(1, 16)
    report = seminorms(sample(get_preset('heat'), 0.0, grid), 2.0, 1)
    assert report.value((0,), (0,)) < 1.0
    assert np.isclose(report.value((1,), (0,)), 0.0)
    assert report.value((0,), (1,)) <= 2.0
    with pytest.raises(ValueError):
        seminorms(sample(get_preset('heat'), 0.0, grid), 2.0, 5)
