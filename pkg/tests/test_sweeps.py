import numpy as np

from core.grid_core import PeriodicGrid
from core.symbol_presets import get_preset
from core.sweeps import (_sobolev, consistency_sweep, convergence_sweep, dyadic, probe_basis, remainder_sweep, sharp_norm_sweep,
                         stability_steps, stability_sweep)


def test_dyadic():
    assert dyadic(4, 6) == [1 / 16, 1 / 32, 1 / 64]


def test_probe_basis_is_normalized():
    grid = PeriodicGrid.create(1, 32)
    probes = probe_basis(grid, 1.0, seed=4, count=3)
    assert probes.shape == (32, 3)
    for j in range(3):
        assert np.isclose(_sobolev(grid, probes[:, j], 1.0), 1.0)
    assert np.allclose(probes, probe_basis(grid, 1.0, seed=4, count=3))


def test_heat_steps_are_contractions():
    grid = PeriodicGrid.create(1, 16)
    report = sharp_norm_sweep(get_preset('heat'), 0.0, 0.0, dyadic(1, 4), grid, resolve_tol=None)
    assert np.allclose([row.error for row in report.rows], 1.0)
    assert report.constant <= 1e-10
    assert report.bounded
    assert [row.scale for row in report.rows] == dyadic(1, 4)


def test_sharp_norm_sweep_records_dropped_steps():
    grid = PeriodicGrid.create(1, 64)
    report = sharp_norm_sweep(get_preset('curved-1d'), 0.0, 0.0, dyadic(4, 8), grid)
    assert report.dropped == dyadic(6, 8)
    assert [row.scale for row in report.rows] == dyadic(4, 5)


def test_zero_symbol_is_stable():
    grid = PeriodicGrid.create(1, 8)
    report = stability_sweep(get_preset('zero'), 0.5, 0.0, [1, 4], grid, 0.0)
    assert np.allclose([row.error for row in report.rows], 1.0)
    assert report.correlation == 0.0
    assert report.passed


def test_heat_convergence_is_an_exact_pass():
    grid = PeriodicGrid.create(1, 16)
    report = convergence_sweep(get_preset('heat'), 0.5, 0.0, 0.0, [1, 2, 4, 8], grid, tol=1e-9)
    assert len(report.fits) == 3
    assert all(fit.exact and fit.passed for fit in report.fits)
    assert report.reference_solver == 'exact_multiplier+magnus'
    assert {row.metric for row in report.rows} == {'operator-surrogate', 'time-integrated', 'final-time', 'difference-norm'}
    assert set(report.difference_norms) == {4, 8}
    assert all(estimate.value < 1e-8 for estimate in report.difference_norms.values())


def test_remainder_sweep_fits_a_linear_matrix_family():
    grid = PeriodicGrid.create(1, 8)
    report = remainder_sweep('scaled-identity', lambda h: h * np.eye(8), dyadic(1, 5), grid, 0.0, 0.0, (0.9, None))
    assert np.isclose(report.fit.slope, 1.0)
    assert report.fit.passed


def test_consistency_sweep_for_a_time_dependent_heat_symbol():
    # defect multiplier h xi^2 e^{-h xi^2}
    grid = PeriodicGrid.create(1, 32)
    report = consistency_sweep(get_preset('heat-linear-time'), 0.0, 0.0, dyadic(1, 4), grid)
    assert report.dropped == []
    assert [row.metric for row in report.rows] == ['consistency-defect'] * 4
    assert all(row.alpha == 1.0 for row in report.rows)
    assert report.rows[0].error > report.rows[-1].error > 0


def test_stability_steps_cover_every_step_size():
    assert stability_steps(1.0, [8, 2, 4, 2]) == [0.5, 0.25, 0.125]


def test_convergence_bands_are_two_sided():
    grid = PeriodicGrid.create(1, 16)
    report = convergence_sweep(get_preset('heat'), 0.5, 0.0, 0.5, [1, 2, 4, 8], grid, tol=1e-9)
    bands = {fit.metric: fit.band for fit in report.fits}
    # alpha = 1, r = 1/2
    assert bands['final-time'] == (0.25, 1.25)
    assert bands['operator-surrogate'] == (0.25, 1.25)
    assert bands['time-integrated'] == (0.75, 1.25)
