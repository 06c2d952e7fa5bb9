import numpy as np
import pytest

from core.rate_fit import centered_band, fit_rate, window_band
from core.sweeps import dyadic


def test_dyadic_errors_give_slope_one():
    h = dyadic(3, 8)
    fit = fit_rate([(x, 3.0 * x) for x in h], centered_band(1.0, 0.15), 'linear')
    assert np.isclose(fit.slope, 1.0)
    assert np.isclose(fit.intercept, np.log2(3.0))
    assert fit.passed
    assert fit.points == len(h)


def test_square_root_errors_give_slope_one_half():
    h = dyadic(2, 9)
    fit = fit_rate([(x, 0.7 * x ** 0.5) for x in h], window_band(0.25, 0.5), 'sqrt')
    assert abs(fit.slope - 0.5) <= 1e-12
    assert fit.passed
    assert not fit_rate([(x, 0.7 * x ** 0.5) for x in h], window_band(1.0, 1.0), 'sqrt').passed


def test_vanishing_errors_are_an_exact_pass():
    fit = fit_rate([(x, 0.0) for x in dyadic(1, 4)], window_band(1.0, 1.0), 'zero', zero_tol=1e-12)
    assert fit.exact and fit.passed
    assert fit.slope is None


def test_too_few_points_are_rejected():
    with pytest.raises(ValueError):
        fit_rate([(0.5, 0.5), (0.25, 0.25), (0.125, 0.125)])


def test_negative_or_zero_errors_are_rejected_unless_all_vanish():
    with pytest.raises(ValueError):
        fit_rate([(0.5, 0.5), (0.25, 0.0), (0.125, 0.125), (0.0625, 0.0625)])


def test_pre_asymptotic_coarsest_point_is_dropped():
    h = dyadic(2, 7)
    points = [(x, x) for x in h]
    points[0] = (h[0], 50 * h[0])
    fit = fit_rate(points, centered_band(1.0, 0.1), 'outlier')
    assert fit.dropped == (h[0],)
    assert np.isclose(fit.slope, 1.0)
    assert fit.points == len(h) - 1


def test_fit_summary_is_plain_data():
    fit = fit_rate([(x, x) for x in dyadic(1, 4)], (0.5, None), 'plain')
    summary = fit.to_dict()
    assert summary['band'] == [0.5, None]
    assert summary['passed'] is True


def test_window_band_rejects_rates_above_the_window():
    h = dyadic(2, 9)
    assert window_band(0.25, 0.5, 0.25) == (0.0, 0.75)
    assert not fit_rate([(x, x) for x in h], window_band(0.25, 0.5), 'too-fast').passed
