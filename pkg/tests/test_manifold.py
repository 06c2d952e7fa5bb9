import numpy as np
import pytest

from core.errors import SupportMarginError
from core.grid_core import GridField, PeriodicGrid
from core.manifold import (Chart, ChartAtlas, MetricField, QFamily, atlas_consistency, build_laplace_beltrami,
                           build_Q, chart_symbol, global_operator_matrix, global_step, l2_stability_check,
                           local_step, manifold_generator, manifold_multiproduct, smooth_step_jet)
from core.propagator import Subdivision


def _flat_family(points=64, charts=2):
    grid = PeriodicGrid.create(1, points)
    atlas = ChartAtlas.trivial_atlas(grid) if charts == 1 else ChartAtlas.circle(grid, charts)
    return QFamily(MetricField.flat(), atlas)


def test_smooth_step_values_and_derivatives():
    sigma, d1, d2 = smooth_step_jet(np.array([-0.5, 0.0, 0.5, 1.0, 1.5]))
    assert np.allclose(sigma, [0.0, 0.0, 0.5, 1.0, 1.0])
    assert np.isclose(d1[2], 2.0)
    s, eps = np.linspace(0.1, 0.9, 9), 1e-5
    assert np.allclose(smooth_step_jet(s)[1], (smooth_step_jet(s + eps)[0] - smooth_step_jet(s - eps)[0]) / (2 * eps),
                       atol=1e-8)
    assert np.allclose(smooth_step_jet(s)[2], (smooth_step_jet(s + eps)[1] - smooth_step_jet(s - eps)[1]) / (2 * eps),
                       atol=1e-6)


def test_metric_must_be_positive():
    with pytest.raises(ValueError):
        MetricField.constant(-1.0)
    with pytest.raises(ValueError):
        build_laplace_beltrami(MetricField.curved(0.9, 0.9), 1.0, np.array([1.25 * np.pi]))


def test_laplace_beltrami_coefficients():
    x = np.linspace(0, 2 * np.pi, 17)
    A = build_laplace_beltrami(MetricField.constant(2.0), 0.0, x)
    assert np.allclose(A.coefficients[2], -0.5)
    assert np.allclose(A.coefficients[1], 0.0)
    g = 1 + 0.3 * np.sin(x)
    A = build_laplace_beltrami(MetricField.curved(0.3, 0.0), 0.0, x)
    assert np.allclose(A.coefficients[2], -1 / g)
    assert np.allclose(A.coefficients[1], 0.3 * np.cos(x) / (2 * g ** 2))


def test_partition_of_unity():
    atlas = ChartAtlas.circle(PeriodicGrid.create(1, 64), 2)
    assert atlas.partition_defect() <= 1e-12
    assert atlas.neighbors == [[0, 1], [0, 1]]
    x, eps = np.linspace(0.05, 2 * np.pi - 0.05, 41), 1e-6
    for i, (phi, phi1, _) in enumerate(atlas.partition_jets(x)):
        ahead, behind = atlas.partition_values(x + eps)[i], atlas.partition_values(x - eps)[i]
        assert np.allclose(phi1, (ahead - behind) / (2 * eps), atol=1e-6)


def test_trivial_atlas_partition():
    atlas = ChartAtlas.trivial_atlas(PeriodicGrid.create(1, 16))
    assert atlas.partition_defect() == 0.0
    assert atlas.coarse_charts == []


def test_support_margin_is_enforced():
    with pytest.raises(SupportMarginError):
        ChartAtlas.circle(PeriodicGrid.create(1, 8), 2)
    with pytest.raises(SupportMarginError):
        ChartAtlas.circle(PeriodicGrid.create(1, 64), 6)


def test_chart_maps():
    with pytest.raises(ValueError):
        Chart(0, 0.0, 0.75 * np.pi, 0.625 * np.pi, np.pi / 32, warp=1.0)
    chart = Chart(0, 0.5, 0.75 * np.pi, 0.625 * np.pi, np.pi / 32, warp=0.2)
    d = np.linspace(-2.0, 2.0, 21)
    assert np.allclose(chart.offset_from_local(chart.local_from_offset(d)), d, atol=1e-12)
    assert not chart.is_gather


def test_pull_matrix_samples_the_global_field():
    grid = PeriodicGrid.create(1, 64)
    for chart in (Chart(1, np.pi, 0.75 * np.pi, 0.625 * np.pi, grid.spacing),
                  Chart(0, 0.5, 0.75 * np.pi, 0.625 * np.pi, grid.spacing, warp=0.2)):
        y = chart.grid.axis_points()
        inside = chart.in_domain(chart.offset_from_local(y))
        pulled = chart.pull_matrix(grid) @ np.cos(grid.axis_points())
        assert np.allclose(pulled[inside], np.cos(chart.to_global(y))[inside], atol=1e-10)


def test_single_chart_q_equals_a():
    grid = PeriodicGrid.create(1, 32)
    points = grid.midpoint_axis()
    A = build_laplace_beltrami(MetricField.curved(0.3, 0.0), 0.0, points)
    Q = build_Q(A, ChartAtlas.trivial_atlas(grid), points)
    for level in Q.levels[1:]:
        assert all(np.allclose(c, 0.0) for c in level.coefficients)
    assert all(np.allclose(q, a) for q, a in zip(Q.total.coefficients, A.coefficients))


def test_two_chart_q_for_a_flat_metric():
    # Q = A + c2 sum phi_i'^2 with no first-order or residual level
    family = _flat_family()
    Q = family.at(0.0)
    jets = family.atlas.partition_jets(Q.points)
    gradient = sum(jet[1] ** 2 for jet in jets)
    assert np.allclose(Q.levels[1].coefficients[0], -gradient, atol=1e-10)
    assert np.allclose(Q.levels[1].coefficients[1:], 0.0, atol=1e-10)
    assert np.allclose(Q.levels[2].coefficients, 0.0, atol=1e-10)


def test_q_identity_holds_for_a_curved_metric():
    grid = PeriodicGrid.create(1, 64)
    family = QFamily(MetricField.curved(0.3, 0.3), ChartAtlas.circle(grid, 2))
    Q = family.at(0.25)
    assert Q.time == 0.25
    assert family.at(0.25) is Q


def test_chart_symbol_of_the_flat_trivial_atlas_is_xi_squared():
    family = _flat_family(charts=1)
    chart = family.atlas.charts[0]
    symbol = chart_symbol(family.at(0.0), chart)
    x = chart.grid.midpoint_axis()[:, None]
    xi = np.array([[0.0, 1.0, 2.5, -4.0]])
    assert np.allclose(symbol(0.0, (x,), (xi,)), np.broadcast_to(xi ** 2, (len(x), 4)), atol=1e-10)


def test_global_step_at_equal_times_is_the_identity():
    family = _flat_family()
    assert np.allclose(global_step(family, 0.25, 0.25).matrix, np.eye(64))
    total = sum(local_step(family, chart, 0.25, 0.25).matrix() for chart in family.atlas.charts)
    assert np.allclose(total, np.eye(64), atol=1e-12)
    with pytest.raises(ValueError):
        local_step(family, family.atlas.charts[0], 0.5, 0.25)


def test_rough_metric_scales_a_fixed_operator():
    grid = PeriodicGrid.create(1, 32)
    metric = MetricField.rough(0.3, 0.5, 0.25)
    start = global_operator_matrix(metric, 0.0, grid)
    for t in (0.1, 0.37):
        assert np.allclose(global_operator_matrix(metric, t, grid), metric.rate(t) / metric.rate(0.0) * start)
    generator, to_s = manifold_generator(metric, grid)
    assert np.allclose(generator(0.2), -start / metric.rate(0.0))
    assert to_s(0.3) == metric.rate.integral(0.3)
    with pytest.raises(ValueError):
        MetricField.rough(amplitude=1.2)


def test_global_step_at_equal_times_is_the_identity_for_a_curved_metric():
    grid = PeriodicGrid.create(1, 64)
    family = QFamily(MetricField.curved(0.3, 0.3), ChartAtlas.circle(grid, 2))
    for t in (0.0, 0.3):
        assert np.max(np.abs(global_step(family, t, t).matrix - np.eye(64))) <= 1e-12
        total = sum(local_step(family, chart, t, t).matrix() for chart in family.atlas.charts)
        assert np.max(np.abs(total - np.eye(64))) <= 1e-12


def test_trivial_atlas_reproduces_the_heat_flow():
    family = _flat_family(charts=1)
    grid = family.atlas.global_grid
    u0 = GridField.from_function(grid, lambda x: np.cos(3 * x))
    result = manifold_multiproduct(family, Subdivision.uniform(0.5, 4), 0.5, u0)
    assert np.allclose(result.values, np.exp(-4.5) * np.cos(3 * grid.axis_points()), atol=1e-10)


def test_two_chart_multiproduct_converges_to_the_heat_flow():
    family = _flat_family()
    grid = family.atlas.global_grid
    x = grid.axis_points()
    u0 = GridField.from_function(grid, lambda x: np.cos(x) + 0.5 * np.sin(2 * x))
    exact = np.exp(-0.25) * np.cos(x) + 0.5 * np.exp(-1.0) * np.sin(2 * x)
    errors = [np.max(np.abs(manifold_multiproduct(family, Subdivision.uniform(0.25, n), 0.25, u0).values - exact))
              for n in (2, 16)]
    assert errors[1] < errors[0]


def test_global_operator_matrix():
    grid = PeriodicGrid.create(1, 32)
    x = grid.axis_points()
    assert np.allclose(global_operator_matrix(MetricField.flat(), 0.0, grid) @ np.cos(3 * x), 9 * np.cos(3 * x))
    g = 1 + 0.3 * np.sin(x)
    applied = global_operator_matrix(MetricField.curved(0.3, 0.0), 0.0, grid) @ np.sin(x)
    assert np.allclose(applied, np.sin(x) / g + 0.3 * np.cos(x) ** 2 / (2 * g ** 2))


def test_l2_stability_report():
    family = _flat_family()
    report = l2_stability_check(family, [2.0 ** -k for k in range(3, 7)])
    assert len(report.rows) == 4
    assert all(np.isfinite(row.error) and row.error > 0 for row in report.rows)
    assert np.isfinite(report.constant) and report.constant >= 0
    assert 0.0 <= report.variation <= 1.0


def test_atlas_consistency_with_coarse_charts():
    grid = PeriodicGrid.create(1, 128)
    family = QFamily(MetricField.curved(0.3, 0.0), ChartAtlas.circle(grid, 6))
    assert len(family.atlas.coarse_charts) == 6
    assert atlas_consistency(family) <= 1e-10
    assert atlas_consistency(_flat_family()) is None
