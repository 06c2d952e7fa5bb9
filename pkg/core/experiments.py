# core/experiments.py

"""Named experiments: build grids and symbols from a config, run sweeps, collect results."""
import logging
from typing import Callable, Dict, List, Optional

import numpy as np

from core.change_of_variables import TransitionMap, bump_cutoff, check_pullback_residual
from core.config import ExperimentConfig, SymbolSpec
from core.data_structures import CheckResult, ExperimentResult, RateFit, ResultRow
from core.errors import ConfigError, EllipticityError
from core.grid_core import PeriodicGrid
from core.manifold import (ChartAtlas, MetricField, QFamily, atlas_consistency, l2_stability_check, local_step,
                           manifold_consistency_sweep, manifold_convergence_sweep, manifold_stability_sweep)
from core.sweep_runner import ProgressCallback
from core.symbol_presets import PRESETS, get_preset, random_trig_symbol, smooth_cutoff, smooth_density, terms_from_spec
from core.symbols import (EllipticityCertificate, SymbolFunction, exp_symbol, sample, trig_polynomial_symbol,
                          verify_ellipticity)
from core.sweeps import (NORM_MAX_ITER, consistency_sweep, convergence_sweep, cutoff_conjugation_sweep,
                         density_conjugation_sweep, generator_composition_sweep, sharp_norm_sweep,
                         sobolev_conjugation_sweep, stability_steps, stability_sweep, step_lipschitz_sweep,
                         weighted_composition_sweep)
from core.weyl import cross_check_norm, quantize
from utils.platform_utils import get_platform_info

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-12
SVD_CHECK_SIZE = 256
SVD_CHECK_TOL = 1e-6


def build_grid(config: ExperimentConfig) -> PeriodicGrid:
    try:
        return PeriodicGrid.create(config.grid.n, config.grid.N, config.grid.L)
    except ValueError as e:
        raise ConfigError('grid', str(e)) from None


def build_symbol(spec: SymbolSpec, grid: PeriodicGrid) -> SymbolFunction:
    """Named preset or custom trig-polynomial family from the [symbol] table."""
    if spec.preset is not None:
        if spec.preset not in PRESETS:
            raise ConfigError('symbol.preset', f"unknown preset {spec.preset!r}; known: {', '.join(sorted(PRESETS))}")
        if PRESETS[spec.preset].dim != grid.dim:
            raise ConfigError('symbol.preset', f"preset {spec.preset!r} is {PRESETS[spec.preset].dim}-dimensional "
                                               f"but grid.n = {grid.dim}")
        try:
            return get_preset(spec.preset, grid.box_length)
        except ValueError as e:
            raise ConfigError('symbol.preset', str(e)) from None
    n = grid.dim
    try:
        return trig_polynomial_symbol(terms_from_spec(spec.principal, n), terms_from_spec(spec.lower, n),
                                      box_length=grid.box_length, dim=n,
                                      principal_increment=terms_from_spec(spec.principal_increment, n),
                                      lower_increment=terms_from_spec(spec.lower_increment, n),
                                      alpha=spec.alpha, ellipticity=EllipticityCertificate(spec.ellipticity),
                                      name='custom')
    except (ValueError, TypeError) as e:
        raise ConfigError('symbol', str(e)) from None


def check_symbol(symbol: SymbolFunction, grid: PeriodicGrid, times) -> None:
    for t in times:
        try:
            ok, margin = verify_ellipticity(symbol, t, grid)
        except EllipticityError as e:
            raise ConfigError('symbol', str(e)) from None
        if not ok:
            raise ConfigError('symbol', f"{symbol.name} fails its ellipticity certificate at t={t} "
                                        f"(margin {margin:.4g})")


def _fit_check(fit: RateFit) -> str:
    slope = 'exact' if fit.exact else f"{fit.slope:.3f}"
    return f"{fit.metric}: slope {slope} band {fit.band} -> {'pass' if fit.passed else 'FAIL'}"


def _stall_notes(label: str, scales) -> List[str]:
    if not scales:
        return []
    listed = ', '.join(f"{scale:g}" for scale in scales)
    logger.warning(f"[RUN] {label}: power iteration hit its iteration cap at {listed}")
    return [f"{label}: power iteration did not converge at {listed}"]


def _sharp_norm(config, grid, symbol, progress) -> ExperimentResult:
    sweep, bands = config.sweep, config.bands
    report = sharp_norm_sweep(symbol, sweep.t, sweep.s, sweep.h_list, grid, seed=config.seed,
                              resolve_tol=sweep.resolve_tol, progress_callback=progress)
    checks = [CheckResult('constant-finite', report.constant, float('inf'), bool(np.isfinite(report.constant))),
              CheckResult('constant-variation', report.variation, bands.variation_max,
                          report.variation <= bands.variation_max)]
    summary = {'C_fit': report.constant, 'variation': report.variation, 'dropped': report.dropped}
    notes = _stall_notes('sharp-norm', report.unconverged)
    if report.rows and grid.size <= SVD_CHECK_SIZE:
        finest = report.rows[-1].scale
        op = quantize(exp_symbol(symbol, sweep.t, finest, grid))
        cross = cross_check_norm([op], sweep.s, sweep.s, grid, seed=config.seed, max_iter=NORM_MAX_ITER)
        checks.append(CheckResult('power-vs-svd', cross.relative_gap, SVD_CHECK_TOL,
                                  cross.relative_gap <= SVD_CHECK_TOL))
        summary['svd_finest'] = cross.svd
    return ExperimentResult(config.experiment, config.name, report.rows, [], checks, summary, notes)


def _stability(config, grid, symbol, progress) -> ExperimentResult:
    """C_fit covers the sharp-norm h_list and every step size T/N the multi-products use."""
    sweep, bands = config.sweep, config.bands
    sharp = sharp_norm_sweep(symbol, 0.0, sweep.s, sweep.h_list, grid, seed=config.seed,
                             resolve_tol=sweep.resolve_tol, progress_callback=progress)
    measured = {row.scale for row in sharp.rows}
    missing = [h for h in stability_steps(sweep.T, sweep.N_list) if h not in measured]
    steps = sharp_norm_sweep(symbol, 0.0, sweep.s, missing, grid, seed=config.seed, resolve_tol=None,
                             progress_callback=progress) if missing else None
    constant = max(sharp.constant, steps.constant if steps else 0.0)
    report = stability_sweep(symbol, sweep.T, sweep.s, sweep.N_list, grid, constant, seed=config.seed,
                             progress_callback=progress)
    largest = max(row.error for row in report.rows)
    checks = [CheckResult('sup-norm-bound', largest, report.bound, largest <= report.bound * (1 + 1e-9)),
              CheckResult('growth-correlation', report.correlation, bands.correlation_max,
                          report.correlation <= bands.correlation_max)]
    summary = {'C_fit': constant, 'C_fit_h_list': sharp.constant, 'bound': report.bound,
               'max_sup_norm': largest, 'spearman': report.correlation}
    rows = sharp.rows + (steps.rows if steps else []) + report.rows
    notes = (_stall_notes('sharp-norm', sharp.unconverged + (steps.unconverged if steps else ()))
             + _stall_notes('stability', report.unconverged))
    return ExperimentResult(config.experiment, config.name, rows, [], checks, summary, notes)


def _consistency(config, grid, symbol, progress) -> ExperimentResult:
    sweep = config.sweep
    report = consistency_sweep(symbol, sweep.t, sweep.s, sweep.h_list, grid, width=config.bands.consistency_width,
                               seed=config.seed, resolve_tol=sweep.resolve_tol, progress_callback=progress)
    summary = {'alpha': symbol.holder.alpha, 'dropped': report.dropped}
    return ExperimentResult(config.experiment, config.name, report.rows, [report.fit], [], summary,
                            _stall_notes('consistency', report.unconverged))


def _convergence_rn(config, grid, symbol, progress) -> ExperimentResult:
    sweep = config.sweep
    report = convergence_sweep(symbol, sweep.T, sweep.s, sweep.r, sweep.N_list, grid, tol=sweep.tol,
                               seed=config.seed, width=config.bands.convergence_width, progress_callback=progress)
    summary = {'alpha': symbol.holder.alpha, 'reference_solver': report.reference_solver,
               'reference_tolerance': report.reference_tolerance,
               'difference_norms': {str(steps): estimate.value for steps, estimate in report.difference_norms.items()}}
    return ExperimentResult(config.experiment, config.name, report.rows, report.fits, [], summary,
                            _stall_notes('difference-norm', report.unconverged))


def _composition_remainders(config, grid, symbol, progress) -> ExperimentResult:
    sweep, bands, seed = config.sweep, config.bands, config.seed
    t, s, h_list, tol = sweep.t, sweep.s, sweep.h_list, sweep.resolve_tol
    lower = (bands.remainder_min, None)
    reports = [
        weighted_composition_sweep(symbol, t, s, h_list, grid, 'weyl', seed, lower, tol, progress),
        weighted_composition_sweep(symbol, t, s, h_list, grid, 'left', seed, (0.0, bands.left_max), tol, progress),
        sobolev_conjugation_sweep(symbol, t, s, h_list, grid, seed, lower, tol, progress),
        cutoff_conjugation_sweep(symbol, t, smooth_cutoff(grid.box_length), h_list, grid, seed, lower, tol, progress),
        density_conjugation_sweep(symbol, t, smooth_density(grid.box_length), h_list, grid, seed, lower, tol,
                                  progress),
        generator_composition_sweep(symbol, t, s, h_list, grid, seed, lower, tol, progress),
        step_lipschitz_sweep(symbol, t, s, h_list, grid, seed, lower, progress),
    ]
    rows = [row for report in reports for row in report.rows]
    fits = [report.fit for report in reports]
    dropped = sorted({h for report in reports for h in report.dropped}, reverse=True)
    notes = [note for report in reports for note in _stall_notes(report.fit.metric, report.unconverged)]
    return ExperimentResult(config.experiment, config.name, rows, fits, [], {'dropped': dropped}, notes)


def _pullback_residual(config, grid, symbol, progress) -> ExperimentResult:
    if grid.dim != 1:
        raise ConfigError('grid.n', "pullback-residual runs on one-dimensional grids")
    spec = config.pullback
    params = {'identity': {}, 'affine': {'slope': spec.slope}, 'generic': {'amplitude': spec.amplitude}}
    chi = bump_cutoff()
    rows, fits, checks = [], [], []
    summary: Dict = {}
    for kind in spec.kinds:
        kappa = TransitionMap.create(kind, **params[kind])
        report = check_pullback_residual(kappa, symbol, chi, config.sweep.h_list, grid, config.sweep.t,
                                         band=(config.bands.pullback_min, None), seed=config.seed)
        rows.extend(report.rows)
        fits.append(report.fit)
        summary[kind] = {'order1_finest': report.rows[len(report.order0_values) - 1].error,
                         'order0_finest': report.order0_values[-1]}
        if kind == 'generic':
            checks.append(CheckResult('order1-improves-generic', summary[kind]['order1_finest'],
                                      summary[kind]['order0_finest'], report.improved))
    return ExperimentResult(config.experiment, config.name, rows, fits, checks, summary, [])


def _oracle_mismatch(symbol: SymbolFunction, grid: PeriodicGrid) -> float:
    sampled = sample(symbol, 0.0, grid)
    fast = quantize(sampled, 'fft').matrix()
    dense = quantize(sampled, 'dense').matrix()
    scale = max(float(np.linalg.norm(dense)), 1e-300)
    return float(np.linalg.norm(fast - dense)) / scale


def _quantization_oracle(config, grid, symbol, progress) -> ExperimentResult:
    spec = config.oracle
    rng = np.random.default_rng(config.seed)
    grids = [PeriodicGrid.create(1, config.grid.N, config.grid.L), PeriodicGrid.create(2, spec.N_2d, config.grid.L)]
    rows, checks = [], []
    for oracle_grid in grids:
        worst = 0.0
        for index in range(spec.count):
            candidate = random_trig_symbol(rng, oracle_grid.dim, oracle_grid.box_length,
                                           name=f"random-{oracle_grid.dim}d-{index}")
            mismatch = _oracle_mismatch(candidate, oracle_grid)
            worst = max(worst, mismatch)
            rows.append(ResultRow(float(index), mismatch, 'quantization-oracle', 0.0, 0.0, 1.0,
                                  oracle_grid.dim, oracle_grid.points_per_dim))
            if progress:
                progress('quantization-oracle', {'done': index + 1, 'total': spec.count})
        checks.append(CheckResult(f"fft-vs-dense-{oracle_grid.dim}d", worst, spec.tolerance, worst <= spec.tolerance))
    return ExperimentResult(config.experiment, config.name, rows, [], checks, {}, [])


def build_atlas(config: ExperimentConfig, grid: PeriodicGrid) -> ChartAtlas:
    spec = config.manifold
    if spec.charts == 1:
        return ChartAtlas.trivial_atlas(grid)
    return ChartAtlas.circle(grid, spec.charts, spec.overlap, spec.warp, spec.scale)


def build_metric(config: ExperimentConfig) -> MetricField:
    spec = config.manifold
    try:
        if spec.profile == 'dyadic':
            return MetricField.rough(spec.amplitude, spec.alpha, spec.increment)
        return MetricField.curved(spec.amplitude, spec.increment, spec.alpha)
    except ValueError as e:
        raise ConfigError('manifold', str(e)) from None


def _convergence_manifold(config, grid, symbol, progress) -> ExperimentResult:
    if grid.dim != 1 or not np.isclose(grid.box_length, 2 * np.pi):
        raise ConfigError('grid', "the manifold experiment runs on the circle: n = 1, L = 2 pi")
    sweep, bands = config.sweep, config.bands
    metric = build_metric(config)
    atlas = build_atlas(config, grid)
    family = QFamily(metric, atlas)
    checks: List[CheckResult] = []
    partition = atlas.partition_defect()
    checks.append(CheckResult('partition-of-unity', partition, IDENTITY_TOL, partition <= IDENTITY_TOL))
    # the chart sum, not the short-circuit in global_step
    identity = sum(local_step(family, chart, sweep.t, sweep.t).matrix() for chart in atlas.charts)
    identity_defect = float(np.max(np.abs(identity - np.eye(grid.size))))
    checks.append(CheckResult('step-identity', identity_defect, IDENTITY_TOL, identity_defect <= IDENTITY_TOL))

    stability = l2_stability_check(family, sweep.h_list, sweep.t, config.seed, progress)
    checks.append(CheckResult('weighted-step-constant', stability.constant, float('inf'),
                              bool(np.isfinite(stability.constant))))
    multi = manifold_stability_sweep(family, sweep.T, sweep.N_list, stability.constant, config.seed, progress)
    largest = max(row.error for row in multi.rows)
    checks.append(CheckResult('manifold-sup-norm-bound', largest, multi.bound, multi.passed))
    convergence = manifold_convergence_sweep(family, sweep.T, sweep.N_list, sweep.tol, config.seed,
                                             bands.manifold_width, progress_callback=progress)
    consistency = manifold_consistency_sweep(family, sweep.t, sweep.h_list, bands.manifold_width, config.seed,
                                             progress)
    mismatch = atlas_consistency(family, sweep.t)
    notes = []
    if mismatch is None:
        notes.append(f"{len(atlas.charts)}-chart atlas has no coarse charts; atlas consistency not checked")
    else:
        checks.append(CheckResult('atlas-consistency', mismatch, 1e-10, mismatch <= 1e-10))
    rows = stability.rows + multi.rows + convergence.rows + consistency.rows
    summary = {'alpha': metric.alpha, 'charts': len(atlas.charts), 'C_fit': stability.constant,
               'variation': stability.variation, 'bound': multi.bound, 'atlas_mismatch': mismatch}
    return ExperimentResult(config.experiment, config.name, rows, convergence.fits + consistency.fits, checks,
                            summary, notes)


RUNNERS: Dict[str, Callable] = {
    'sharp-norm': _sharp_norm,
    'stability': _stability,
    'consistency': _consistency,
    'convergence-rn': _convergence_rn,
    'convergence-manifold': _convergence_manifold,
    'composition-remainders': _composition_remainders,
    'pullback-residual': _pullback_residual,
    'quantization-oracle': _quantization_oracle,
}


def run(config: ExperimentConfig, progress_callback: Optional[ProgressCallback] = None) -> ExperimentResult:
    """Dispatches to the named experiment; the result carries rows, fits, checks and a summary."""
    grid = build_grid(config)
    symbol = build_symbol(config.symbol, grid)
    if config.experiment not in ('quantization-oracle', 'convergence-manifold'):
        check_symbol(symbol, grid, sorted({0.0, config.sweep.t, config.sweep.T}))
    logger.info(f"[RUN] {config.experiment} '{config.name}' symbol={symbol.name} grid={grid.dim}x{grid.points_per_dim}")
    result = RUNNERS[config.experiment](config, grid, symbol, progress_callback)
    for fit in result.fits:
        logger.info(f"[FIT] {_fit_check(fit)}")
    for check in result.checks:
        logger.info(f"[RUN] {check.name}: {check.value:.6g} vs {check.threshold:.6g} -> "
                    f"{'pass' if check.passed else 'FAIL'}")
    summary = {
        'experiment': config.experiment,
        'name': config.name,
        'passed': result.passed,
        'fits': [fit.to_dict() for fit in result.fits],
        'checks': [check.to_dict() for check in result.checks],
        'results': result.summary,
        'notes': result.notes,
        'config': config.to_dict(),
        'versions': get_platform_info(),
    }
    return result._replace(summary=summary)
