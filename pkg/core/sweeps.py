# core/sweeps.py

"""Operator-norm sweeps: sharp step bound, stability, consistency, convergence, remainders."""
import logging
from fractions import Fraction
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from core.data_structures import RateFit, ResultRow
from core.grid_core import GridField, PeriodicGrid, sobolev_multiplier_array
from core.propagator import MultiProduct, Subdivision, certify_reference, step
from core.rate_fit import centered_band, fit_rate, window_band
from core.sweep_runner import ProgressCallback, run_points
from core.symbols import (SampledSymbol, SymbolFunction, exp_symbol, japanese_bracket_symbol,
                          resolved_steps, sample)
from core.weyl import (MatrixStep, MultiplicationStep, OperatorNormEstimate, SobolevStep, left_quantize,
                       operator_norm, quantize)

logger = logging.getLogger(__name__)

NORM_METHOD = 'power'
NORM_MAX_ITER = 1000
PROBE_COUNT = 8
DIFFERENCE_COUNT = 2


def dyadic(k_min: int, k_max: int) -> List[float]:
    """[2^-k_min, ..., 2^-k_max]."""
    return [2.0 ** -k for k in range(k_min, k_max + 1)]


def _norm(chain, grid, s_in, s_out, seed) -> OperatorNormEstimate:
    return operator_norm(chain, s_in, s_out, grid, seed=seed, max_iter=NORM_MAX_ITER, method=NORM_METHOD)


def _split(scales: Sequence[float], estimates: Sequence[OperatorNormEstimate]) -> Tuple[List[float], Tuple[float, ...]]:
    """Norm values and the scales whose power iteration hit the iteration cap."""
    values = [estimate.value for estimate in estimates]
    stalled = tuple(float(scale) for scale, estimate in zip(scales, estimates) if not estimate.converged)
    return values, stalled


def _row(h, value, metric, grid, s=0.0, r=0.0, alpha=1.0) -> ResultRow:
    return ResultRow(float(h), float(value), metric, float(s), float(r), float(alpha),
                     grid.dim, grid.points_per_dim)


class SharpNormReport(NamedTuple):
    """Per-h norms of p_h^w and the empirical constant max (norm - 1)/h."""
    rows: List[ResultRow]
    constant: float
    variation: float
    dropped: List[float]
    unconverged: Tuple[float, ...] = ()

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.constant)) and self.variation < 0.25


def sharp_norm_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                     grid: PeriodicGrid, weight: Optional[GridField] = None, seed: int = 0,
                     resolve_tol: Optional[float] = 1e-6,
                     progress_callback: Optional[ProgressCallback] = None) -> SharpNormReport:
    """||p_h^w||_(H^s, H^s) over h; with ``weight`` the norm is taken in L2(m dx).

    The constant is max over h > 0 of (norm - 1)/h; ``variation`` compares it
    across the three finest retained h.
    """
    h_values = sorted((float(h) for h in h_list), reverse=True)
    dropped: List[float] = []
    if resolve_tol is not None:
        h_values, dropped = resolved_steps(symbols, t, grid, h_values, resolve_tol)
    chain_wrap = None
    if weight is not None:
        root = np.sqrt(np.asarray(weight.values, dtype=float).reshape(-1))
        if np.any(root <= 0):
            raise ValueError("weight must be strictly positive")
        chain_wrap = (MultiplicationStep(grid, 1.0 / root), MultiplicationStep(grid, root))

    def measure(h):
        op = quantize(exp_symbol(symbols, t, h, grid))
        chain = [op] if chain_wrap is None else [chain_wrap[0], op, chain_wrap[1]]
        return _norm(chain, grid, s, s, seed)

    norms, stalled = _split(h_values, run_points(measure, h_values, 'sharp-norm', progress_callback))
    metric = 'sharp-norm' if weight is None else 'sharp-norm-weighted'
    rows = [_row(h, value, metric, grid, s=s, alpha=symbols.holder.alpha) for h, value in zip(h_values, norms)]
    ratios = [max(0.0, (value - 1.0) / h) for h, value in zip(h_values, norms) if h > 0]
    constant = max(ratios, default=0.0)
    finest = ratios[-3:]
    top = max(finest, default=0.0)
    variation = 0.0 if top <= 1e-8 else (top - min(finest)) / top
    logger.info(f"[SWEEP] sharp norm {symbols.name} s={s}: C_fit={constant:.4g} variation={variation:.3f}")
    return SharpNormReport(rows, float(constant), float(variation), dropped, stalled)


class StabilityReport(NamedTuple):
    """sup over knots of ||W_(P, t_k)|| for each subdivision size."""
    rows: List[ResultRow]
    bound: float
    correlation: float
    passed: bool
    unconverged: Tuple[float, ...] = ()


def stability_steps(T: float, N_list: Sequence[int]) -> List[float]:
    """The step sizes T/N a stability sweep over N_list multiplies together."""
    return sorted({T / steps for steps in N_list}, reverse=True)


def stability_sweep(symbols: SymbolFunction, T: float, s: float, N_list: Sequence[int],
                    grid: PeriodicGrid, constant: float, seed: int = 0,
                    progress_callback: Optional[ProgressCallback] = None) -> StabilityReport:
    """Checks sup_k ||W_(P, t_k)||_(H^s, H^s) <= e^{C T} and the absence of growth in N.

    ``constant`` must bound (||p_h^w|| - 1)/h for every step size in
    ``stability_steps(T, N_list)``.
    """
    identity = np.eye(grid.size, dtype=complex)

    def measure(steps):
        mp = MultiProduct(symbols, Subdivision.uniform(T, steps), grid)
        estimates = [_norm([MatrixStep(grid, W)], grid, s, s, seed) for W in mp.knot_arrays(identity)]
        return max(estimates, key=lambda estimate: estimate.value)._replace(
            converged=all(estimate.converged for estimate in estimates))

    sups, stalled = _split(N_list, run_points(measure, list(N_list), 'stability', progress_callback))
    bound = float(np.exp(max(constant, 0.0) * T))
    if len(set(sups)) > 1 and len(sups) > 2:
        correlation = float(spearmanr(list(N_list), sups).correlation)
        correlation = 0.0 if np.isnan(correlation) else correlation
    else:
        correlation = 0.0
    passed = max(sups) <= bound * (1 + 1e-9) and correlation <= 0.5
    rows = [_row(steps, value, 'stability-sup-norm', grid, s=s, alpha=symbols.holder.alpha)
            for steps, value in zip(N_list, sups)]
    logger.info(f"[SWEEP] stability {symbols.name}: max={max(sups):.6f} bound={bound:.6f} rho={correlation:.3f}")
    return StabilityReport(rows, bound, correlation, bool(passed), stalled)


def _resolved(symbols, t, grid, h_list, resolve_tol):
    if resolve_tol is None:
        return sorted((float(h) for h in h_list), reverse=True), []
    return resolved_steps(symbols, t, grid, sorted(h_list, reverse=True), resolve_tol)


class SweepReport(NamedTuple):
    rows: List[ResultRow]
    fit: RateFit
    dropped: List[float]
    unconverged: Tuple[float, ...] = ()


def consistency_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                      grid: PeriodicGrid, width: float = 0.15, seed: int = 0,
                      resolve_tol: Optional[float] = 1e-6,
                      progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """Defect q(t+h)^w P_(t+h, t) - (q(t) p_h)^w in (H^s, H^{s-2}); slope alpha +- width."""
    alpha = symbols.holder.alpha
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    q_now = sample(symbols, t, grid)

    def measure(h):
        p = exp_symbol(symbols, t, h, grid)
        later = quantize(sample(symbols, t + h, grid)).matrix()
        defect = later @ quantize(p).matrix() - quantize(q_now * p).matrix()
        return _norm([MatrixStep(grid, defect)], grid, s, s - 2, seed)

    values, stalled = _split(h_values, run_points(measure, h_values, 'consistency', progress_callback))
    rows = [_row(h, v, 'consistency-defect', grid, s=s, alpha=alpha) for h, v in zip(h_values, values)]
    fit = fit_rate(list(zip(h_values, values)), centered_band(alpha, width), 'consistency-defect')
    return SweepReport(rows, fit, dropped, stalled)


class ConvergenceReport(NamedTuple):
    rows: List[ResultRow]
    fits: List[RateFit]
    reference_solver: str
    reference_tolerance: float
    difference_norms: Dict[int, OperatorNormEstimate]
    unconverged: Tuple[float, ...] = ()


def probe_basis(grid: PeriodicGrid, s: float, seed: int, count: int = PROBE_COUNT) -> np.ndarray:
    """Seeded white-noise fields normalized in H^s, as columns of a (size, count) array."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((grid.size, count)) + 1j * rng.standard_normal((grid.size, count))
    probes = sobolev_multiplier_array(grid, -s, noise)
    norms = np.array([_sobolev(grid, probes[:, j], s) for j in range(count)])
    return probes / norms[None, :]


def _sobolev(grid: PeriodicGrid, values: np.ndarray, s: float) -> float:
    weighted = sobolev_multiplier_array(grid, s, values)
    return float(np.sqrt(grid.cell_volume * np.sum(np.abs(weighted) ** 2)))


def _union_knots(T: float, N_list: Sequence[int]) -> List[Fraction]:
    return sorted({Fraction(k, steps) for steps in N_list for k in range(1, steps + 1)})


def convergence_sweep(symbols: SymbolFunction, T: float, s: float, r: float, N_list: Sequence[int],
                      grid: PeriodicGrid, u0: Optional[GridField] = None, tol: float = 1e-9,
                      seed: int = 0, width: float = 0.25,
                      progress_callback: Optional[ProgressCallback] = None) -> ConvergenceReport:
    """Multi-product error against a certified reference in three metrics.

    ``operator-surrogate``: max over the probe basis of ||(W - U)u||_{H^{s-1+r}} / ||u||_{H^s}
    at T. ``time-integrated``: sqrt(sum_k ||(W - U)u0||_{H^s}^2 dt) over the knots.
    ``final-time``: ||(W - U)u0||_{H^{s-1+r}} / ||u0||_{H^s} at T.

    The final-time metrics converge no slower than alpha(1 - r) and no faster
    than alpha, so they are fitted against that window widened by ``width``;
    the time-integrated metric is fitted against alpha +- width. For the
    DIFFERENCE_COUNT largest N, power iteration also runs on the dense
    difference W - U at T.
    """
    if not 0 <= r < 1:
        raise ValueError(f"r must lie in [0, 1), got {r}")
    alpha = symbols.holder.alpha
    probes = probe_basis(grid, s, seed)
    initial = probes[:, :1] if u0 is None else u0.flat().reshape(-1, 1)
    data = np.concatenate([probes, initial], axis=1)
    knots = _union_knots(T, N_list)
    times = [float(k) * T for k in knots]
    reference, info = certify_reference(symbols, grid, times, data, tol)
    by_time = {knot: values for knot, values in zip(knots, reference)}
    target = s - 1 + r
    initial_norm = _sobolev(grid, initial[:, 0], s)

    def measure(steps):
        mp = MultiProduct(symbols, Subdivision.uniform(T, steps), grid)
        trajectory = mp.knot_arrays(data)
        final_diff = trajectory[-1] - by_time[Fraction(1)]
        surrogate = max(_sobolev(grid, final_diff[:, j], target) for j in range(PROBE_COUNT))
        dt = T / steps
        integrated = np.sqrt(sum(_sobolev(grid, trajectory[k][:, -1] - by_time[Fraction(k, steps)][:, -1], s) ** 2
                                 for k in range(1, steps + 1)) * dt)
        strong = _sobolev(grid, final_diff[:, -1], target) / initial_norm
        return surrogate, integrated, strong

    results = run_points(measure, list(N_list), 'convergence', progress_callback)
    scales = [T / steps for steps in N_list]
    zero_tol = 100 * tol
    rows, fits = [], []
    final_band = window_band(alpha * (1 - r), alpha, width)
    specs = (('operator-surrogate', final_band), ('time-integrated', centered_band(alpha, width)),
             ('final-time', final_band))
    for index, (metric, band) in enumerate(specs):
        values = [result[index] for result in results]
        rows.extend(_row(h, v, metric, grid, s=s, r=r, alpha=alpha) for h, v in zip(scales, values))
        fits.append(fit_rate(list(zip(scales, values)), band, metric, zero_tol=zero_tol))

    largest = sorted(set(N_list))[-DIFFERENCE_COUNT:]
    identity = np.eye(grid.size, dtype=complex)
    (exact,), _ = certify_reference(symbols, grid, [T], identity, tol)

    def difference(steps):
        W = MultiProduct(symbols, Subdivision.uniform(T, steps), grid).matrix(T)
        return _norm([MatrixStep(grid, W - exact)], grid, s, target, seed)

    estimates = run_points(difference, largest, 'difference-norm', progress_callback)
    differences = dict(zip(largest, estimates))
    norms, stalled = _split(largest, estimates)
    rows.extend(_row(T / steps, value, 'difference-norm', grid, s=s, r=r, alpha=alpha)
                for steps, value in zip(largest, norms))
    logger.info(f"[SWEEP] difference norms {symbols.name}: "
                + ', '.join(f"N={steps}: {value:.3e}" for steps, value in zip(largest, norms)))
    return ConvergenceReport(rows, fits, info.solver, info.tolerance, differences, stalled)


def remainder_sweep(metric: str, build: Callable[[float], np.ndarray], h_list: Sequence[float],
                    grid: PeriodicGrid, s_in: float, s_out: float, band: Tuple[float, Optional[float]],
                    seed: int = 0, s: float = 0.0, alpha: float = 1.0,
                    progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """Norm of the matrix build(h) from H^{s_in} to H^{s_out} over h, with a slope fit."""
    h_values = list(h_list)

    def measure(h):
        return _norm([MatrixStep(grid, build(h))], grid, s_in, s_out, seed)

    values, stalled = _split(h_values, run_points(measure, h_values, metric, progress_callback))
    rows = [_row(h, v, metric, grid, s=s, alpha=alpha) for h, v in zip(h_values, values)]
    return SweepReport(rows, fit_rate(list(zip(h_values, values)), band, metric), [], stalled)


def _bracket(grid: PeriodicGrid, power: float) -> SampledSymbol:
    return sample(japanese_bracket_symbol(power, grid.dim), 0.0, grid)


def weighted_composition_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                               grid: PeriodicGrid, quantization: str = 'weyl', seed: int = 0,
                               band: Tuple[float, Optional[float]] = (0.9, None),
                               resolve_tol: Optional[float] = 1e-6,
                               progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||(p_h^w)^* E^{2s} p_h^w - (<xi>^{2s}|p_h|^2)^w||_(H^s, H^-s).

    With ``quantization='left'`` every quantization is the left one; the
    remainder then loses half an order in h.
    """
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    bracket = _bracket(grid, 2 * s)
    weight = SobolevStep(grid, 2 * s)
    quant = quantize if quantization == 'weyl' else (lambda sym: left_quantize(sym))

    def build(h):
        p = exp_symbol(symbols, t, h, grid)
        op = quant(p).matrix()
        composed = op.conj().T @ weight.apply_array(op)
        return composed - quant(bracket * p.conj() * p).matrix()

    metric = f"weighted-composition-{quantization}"
    report = remainder_sweep(metric, build, h_values, grid, s, -s, band, seed, s=s,
                             progress_callback=progress_callback)
    return report._replace(dropped=dropped)


def sobolev_conjugation_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                              grid: PeriodicGrid, seed: int = 0,
                              band: Tuple[float, Optional[float]] = (0.9, None),
                              resolve_tol: Optional[float] = 1e-6,
                              progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||E^s (|p_h|^2)^w E^s - (<xi>^{2s}|p_h|^2)^w||_(H^s, H^-s)."""
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    bracket = _bracket(grid, 2 * s)
    half = SobolevStep(grid, s)

    def build(h):
        p = exp_symbol(symbols, t, h, grid)
        modulus = quantize(p.conj() * p).matrix()
        conjugated = half.apply_array(half.apply_array(modulus.T).T)
        return conjugated - quantize(bracket * p.conj() * p).matrix()

    report = remainder_sweep('sobolev-conjugation', build, h_values, grid, s, -s, band, seed, s=s,
                             progress_callback=progress_callback)
    return report._replace(dropped=dropped)


def cutoff_conjugation_sweep(symbols: SymbolFunction, t: float, cutoff: SymbolFunction,
                             h_list: Sequence[float], grid: PeriodicGrid, seed: int = 0,
                             band: Tuple[float, Optional[float]] = (0.9, None),
                             resolve_tol: Optional[float] = 1e-6,
                             progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||phi^w p_h^w phi^w - (phi^2 p_h)^w||_(L2, L2) for an x-only cutoff phi."""
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    phi = sample(cutoff, 0.0, grid)
    phi_op = quantize(phi).matrix()

    def build(h):
        p = exp_symbol(symbols, t, h, grid)
        return phi_op @ quantize(p).matrix() @ phi_op - quantize(phi * phi * p).matrix()

    report = remainder_sweep('cutoff-conjugation', build, h_values, grid, 0.0, 0.0, band, seed,
                             progress_callback=progress_callback)
    return report._replace(dropped=dropped)


def density_conjugation_sweep(symbols: SymbolFunction, t: float, density: SymbolFunction,
                              h_list: Sequence[float], grid: PeriodicGrid, seed: int = 0,
                              band: Tuple[float, Optional[float]] = (0.9, None),
                              resolve_tol: Optional[float] = 1e-6,
                              progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||(p_h^w)^* f (p_h^w) - (f |p_h|^2)^w||_(L2, L2) for a positive density f(x)."""
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    f = sample(density, 0.0, grid)
    f_op = quantize(f).matrix()

    def build(h):
        p = exp_symbol(symbols, t, h, grid)
        op = quantize(p).matrix()
        return op.conj().T @ f_op @ op - quantize(f * p.conj() * p).matrix()

    report = remainder_sweep('density-conjugation', build, h_values, grid, 0.0, 0.0, band, seed,
                             progress_callback=progress_callback)
    return report._replace(dropped=dropped)


def generator_composition_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                                grid: PeriodicGrid, seed: int = 0,
                                band: Tuple[float, Optional[float]] = (0.9, None),
                                resolve_tol: Optional[float] = 1e-6,
                                progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||q^w p_h^w - (q p_h)^w||_(H^s, H^{s-2})."""
    h_values, dropped = _resolved(symbols, t, grid, h_list, resolve_tol)
    q = sample(symbols, t, grid)
    q_op = quantize(q).matrix()

    def build(h):
        p = exp_symbol(symbols, t, h, grid)
        return q_op @ quantize(p).matrix() - quantize(q * p).matrix()

    report = remainder_sweep('generator-composition', build, h_values, grid, s, s - 2, band, seed, s=s,
                             progress_callback=progress_callback)
    return report._replace(dropped=dropped)


def step_lipschitz_sweep(symbols: SymbolFunction, t: float, s: float, h_list: Sequence[float],
                         grid: PeriodicGrid, seed: int = 0,
                         band: Tuple[float, Optional[float]] = (0.9, None),
                         progress_callback: Optional[ProgressCallback] = None) -> SweepReport:
    """||P_(t+h, t) - P_(t+h/2, t)||_(H^s, H^{s-2}) over h; Lipschitz in h means slope 1."""
    h_values = sorted((float(h) for h in h_list), reverse=True)

    def build(h):
        return step(symbols, t, t + h, grid).matrix() - step(symbols, t, t + h / 2, grid).matrix()

    return remainder_sweep('step-lipschitz', build, h_values, grid, s, s - 2, band, seed, s=s,
                           progress_callback=progress_callback)

