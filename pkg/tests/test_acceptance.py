from pathlib import Path

import numpy as np

from core.config import load_config
from core.experiments import run

PRESETS = Path(__file__).resolve().parent.parent / 'presets'


def _run(name, overrides=None):
    return run(load_config(PRESETS / f'{name}.toml', overrides, environ={}))


def test_holder_half_consistency_slope_is_alpha():
    result = _run('consistency_holder_half')
    fit, = result.fits
    assert fit.passed
    assert abs(fit.slope - 0.5) <= 0.15


def test_stability_constant_covers_every_multiproduct_step():
    result = _run('stability_curved')
    checks = {check.name: check for check in result.checks}
    assert checks['sup-norm-bound'].passed
    assert checks['growth-correlation'].passed
    assert result.summary['results']['spearman'] <= 0.5
    # N = 2 on T = 0.5 steps by 0.25, outside the sharp-norm h_list
    coarse = [row.error for row in result.rows if row.metric == 'sharp-norm' and row.scale == 0.25]
    assert coarse
    assert result.summary['results']['C_fit'] >= (coarse[0] - 1.0) / 0.25
    assert result.summary['results']['C_fit'] >= result.summary['results']['C_fit_h_list']
    assert result.passed


def test_composition_remainders_are_first_order():
    result = _run('composition_remainders_curved', {'grid.N': 512, 'sweep.k_min': 7, 'sweep.k_max': 11})
    remainders = [fit for fit in result.fits if fit.band == (0.9, None)]
    assert len(remainders) == 6
    for fit in remainders:
        assert fit.passed, fit.metric
        assert fit.slope >= 0.9


def test_generic_pullback_residual_is_first_order_and_improves():
    result = _run('pullback_residual', {'pullback.kinds': ['generic'], 'grid.N': 64, 'sweep.k_max': 7})
    fit, = result.fits
    assert fit.slope >= 0.8 and fit.passed
    check, = result.checks
    assert check.name == 'order1-improves-generic'
    assert check.value < check.threshold
    assert check.passed


def test_heat_sentinel_is_exact():
    result = _run('heat_exact')
    assert result.passed
    assert all(fit.exact for fit in result.fits)
    assert all(np.isfinite(value) for value in result.summary['results']['difference_norms'].values())
