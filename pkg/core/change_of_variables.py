# core/change_of_variables.py

"""Transition maps and the transport of Weyl symbols under a change of variables (n = 1).

A transition map kappa sends original coordinates x to new coordinates x~ with
inverse L. The pulled-back symbol of b with cutoff chi is

    alpha_0(x~, xi) = chi(L)^2 b(L, k xi),            k = kappa'(L(x~))
    alpha_1(x~, xi) = (i/2) chi(L)^2 f (d_xi b)(L, k xi),  f = kappa''(L) / kappa'(L)
"""
import logging
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import newton

from core.data_structures import RateFit, ResultRow
from core.errors import OverlapError
from core.grid_core import PeriodicGrid, spectral_derivative
from core.rate_fit import fit_rate
from core.symbols import SampledSymbol, SymbolFunction, exp_symbol_function, symbol_axes, symbol_shape
from core.weyl import MatrixStep, MultiplicationStep, operator_norm, quantize

logger = logging.getLogger(__name__)

SERIES_THRESHOLD = 1e-6
TRANSITION_KINDS = ('identity', 'affine', 'generic')


class TransitionMap:
    """kappa with first and second derivatives and a Newton inverse on an overlap interval."""

    def __init__(self, kind: str, forward: Callable, first: Callable, second: Callable,
                 overlap: Tuple[float, float] = (-np.inf, np.inf),
                 inverse: Optional[Callable] = None, name: str = ''):
        self.kind = kind
        self.forward = forward
        self.first = first
        self.second = second
        self.overlap = (float(overlap[0]), float(overlap[1]))
        self._inverse = inverse
        self.name = name or kind

    def __repr__(self):
        return f"TransitionMap({self.name!r})"

    @classmethod
    def identity(cls) -> 'TransitionMap':
        return cls('identity', lambda x: np.asarray(x, dtype=float),
                   lambda x: np.ones_like(np.asarray(x, dtype=float)),
                   lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   inverse=lambda y: np.asarray(y, dtype=float))

    @classmethod
    def affine(cls, slope: float = 1.25, center: float = np.pi, half_width: float = np.pi) -> 'TransitionMap':
        """kappa(x) = slope (x - center) + center on the chart |x - center| <= half_width."""
        if slope == 0:
            raise ValueError("affine transition map needs a nonzero slope")
        forward = lambda x: slope * (np.asarray(x, dtype=float) - center) + center
        return cls('affine', forward,
                   lambda x: np.full_like(np.asarray(x, dtype=float), slope),
                   lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   overlap=_image_interval(forward, center, half_width),
                   inverse=lambda y: (np.asarray(y, dtype=float) - center) / slope + center,
                   name=f"affine({slope:g})")

    @classmethod
    def generic(cls, amplitude: float = 0.3, center: float = np.pi,
                half_width: float = np.pi) -> 'TransitionMap':
        """kappa(x) = x + amplitude sin(x - center); commutes with 2 pi shifts."""
        if abs(amplitude) >= 1:
            raise ValueError(f"|amplitude| must be < 1 for a diffeomorphism, got {amplitude}")
        forward = lambda x: np.asarray(x, dtype=float) + amplitude * np.sin(np.asarray(x) - center)
        return cls('generic', forward,
                   lambda x: 1.0 + amplitude * np.cos(np.asarray(x, dtype=float) - center),
                   lambda x: -amplitude * np.sin(np.asarray(x, dtype=float) - center),
                   overlap=_image_interval(forward, center, half_width),
                   name=f"generic({amplitude:g})")

    @classmethod
    def create(cls, kind: str, **params) -> 'TransitionMap':
        if kind not in TRANSITION_KINDS:
            raise ValueError(f"unknown transition map {kind!r}")
        return getattr(cls, kind)(**params)

    def check_overlap(self, y):
        values = np.asarray(y, dtype=float)
        lo, hi = self.overlap
        if np.any(values < lo) or np.any(values > hi):
            raise OverlapError(f"points outside the overlap [{lo:g}, {hi:g}] of {self.name}")

    def inverse(self, y) -> np.ndarray:
        """L(y) = kappa^{-1}(y)."""
        y = np.asarray(y, dtype=float)
        if self._inverse is not None:
            return self._inverse(y)
        flat = y.reshape(-1)
        root = newton(lambda x: self.forward(x) - flat, flat.copy(), fprime=self.first,
                      fprime2=self.second, tol=1e-14, maxiter=100)
        return np.asarray(root, dtype=float).reshape(y.shape)

    def inverse_derivatives(self, y) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(L, L', L'') at y."""
        x = self.inverse(y)
        k1, k2 = self.first(x), self.second(x)
        return x, 1.0 / k1, -k2 / k1 ** 3


def _image_interval(forward: Callable, center: float, half_width: float) -> Tuple[float, float]:
    """kappa([center - half_width, center + half_width]) for a monotone kappa."""
    if half_width <= 0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    ends = sorted(float(forward(center + sign * half_width)) for sign in (-1.0, 1.0))
    return ends[0], ends[1]


def bump_cutoff(center: float = np.pi, half_width: float = 0.35 * np.pi) -> Callable:
    """chi(x) = exp(1 - 1/(1 - r^2)), r = (x - center)/half_width, zero for |r| >= 1."""
    def chi(x):
        r = (np.asarray(x, dtype=float) - center) / half_width
        inside = np.abs(r) < 1
        out = np.zeros(r.shape)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out
    return chi


def kappa_tilde(kappa: TransitionMap, x, y) -> np.ndarray:
    """(L(x) - L(y)) / (x - y) as a trailing 1x1 matrix; the diagonal limit is L'(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kappa.check_overlap(x)
    kappa.check_overlap(y)
    x, y = np.broadcast_arrays(x, y)
    delta = y - x
    base, first, second = kappa.inverse_derivatives(x)
    series = first + second * delta / 2
    close = np.abs(delta) < SERIES_THRESHOLD
    safe_delta = np.where(close, 1.0, delta)
    quotient = (base - kappa.inverse(y)) / (-safe_delta)
    result = np.where(close, series, quotient)
    return result[..., None, None]


def transport_coefficients(c0, c1, c2, psi1, psi2):
    """Coefficients of sum c_k d_x^k in the coordinate y = psi(x): (c0, c2 psi'' + c1 psi', c2 psi'^2)."""
    return c0, c2 * psi2 + c1 * psi1, c2 * psi1 ** 2


def differential_weyl_symbol(c0, c1, c2, dc1, dc2, d2c2, xi):
    """Weyl symbol of c2 d^2 + c1 d + c0: -c2 xi^2 + i xi (c1 - c2') + c0 - c1'/2 + c2''/4."""
    return -c2 * xi ** 2 + 1j * xi * (c1 - dc2) + c0 - dc1 / 2 + d2c2 / 4


def _local_coordinates(grid: PeriodicGrid):
    if grid.dim != 1:
        raise ValueError("changes of variables are supported for n = 1 only")
    x, xi = symbol_axes(grid)
    return x[0], xi[0]


def pullback_symbol(kappa: TransitionMap, b: SymbolFunction, chi: Callable, order: int,
                    grid: PeriodicGrid, t: float = 0.0) -> SampledSymbol:
    """alpha_kappa sampled on the grid of new coordinates; order 1 adds the f d_xi b term."""
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order}")
    if order == 1 and b.dxi is None:
        raise ValueError(f"symbol {b.name!r} has no xi-derivative")
    x_new, xi = _local_coordinates(grid)
    kappa.check_overlap(x_new)
    base, first_inv, _ = kappa.inverse_derivatives(x_new)
    k = kappa.first(base)
    cut = np.asarray(chi(base), dtype=float) ** 2
    values = cut * b(t, (base,), (k * xi,))
    if order == 1:
        f = kappa.second(base) / k
        values = values + 0.5j * cut * f * b.dxi(t, (base,), (k * xi,), 0)
    values = np.broadcast_to(values, symbol_shape(grid))
    return SampledSymbol(grid, values, name=f"pullback{order}({b.name})")


def transported_weyl_symbol(kappa: TransitionMap, coefficients: Sequence[Callable],
                            grid: PeriodicGrid) -> SampledSymbol:
    """Exact Weyl symbol of (kappa^{-1})^* P kappa^* for P = sum c_k(x) d_x^k (k <= 2).

    Derivatives of the transported coefficients are spectral on the midpoint grid,
    so the result is exact when the transported coefficients are periodic.
    """
    x_new, xi = _local_coordinates(grid)
    base = kappa.inverse(x_new[:, 0])
    psi1, psi2 = kappa.first(base), kappa.second(base)
    c0, c1, c2 = (np.asarray(c(base), dtype=complex) for c in coefficients)
    t0, t1, t2 = transport_coefficients(c0, c1, c2, psi1, psi2)
    length = grid.box_length
    dt1 = spectral_derivative(t1, length)
    dt2 = spectral_derivative(t2, length)
    d2t2 = spectral_derivative(t2, length, 2)
    column = lambda arr: arr[:, None]
    values = differential_weyl_symbol(column(t0), column(t1), column(t2), column(dt1), column(dt2),
                                      column(d2t2), xi)
    return SampledSymbol(grid, np.broadcast_to(values, symbol_shape(grid)), name='transported')


def differential_coefficients(q: SymbolFunction, t: float, box_length: float,
                              samples: int = 64, tol: float = 1e-10) -> Optional[Tuple[Callable, ...]]:
    """Operator coefficients (c0, c1, c2) with (c2 d^2 + c1 d + c0)^w = q, or None.

    q is read as a2 xi^2 + a1 xi + a0 from three xi-samples; a fourth sample
    decides whether q is a polynomial of degree two in xi. Then c2 = -a2,
    c1 = c2' - i a1 and c0 = a0 - a2''/4 - i a1'/2, with x-derivatives taken
    spectrally on ``samples`` periodic points and evaluated anywhere by
    trigonometric interpolation.
    """
    if q.dim != 1:
        return None
    x = np.arange(samples) * (box_length / samples)
    at = lambda value: np.asarray(q(t, (x,), (np.full_like(x, value),)), dtype=complex)
    q0, qp, qm, q2 = at(0.0), at(1.0), at(-1.0), at(2.0)
    a0, a1, a2 = q0, (qp - qm) / 2, (qp + qm) / 2 - q0
    scale = max(1.0, float(np.max(np.abs(q2))))
    if np.max(np.abs(4 * a2 + 2 * a1 + a0 - q2)) > tol * scale:
        return None
    c2 = -a2
    c1 = spectral_derivative(c2, box_length) - 1j * a1
    c0 = a0 - spectral_derivative(a2, box_length, 2) / 4 - 0.5j * spectral_derivative(a1, box_length)
    return tuple(_trigonometric_interpolant(c, box_length) for c in (c0, c1, c2))


def _trigonometric_interpolant(values: np.ndarray, box_length: float) -> Callable:
    count = len(values)
    coeffs = np.fft.fft(values) / count
    wavenumbers = 2 * np.pi * np.fft.fftfreq(count, d=box_length / count)
    # the Nyquist mode has no symmetric partner
    if count % 2 == 0:
        coeffs[count // 2] = 0.0

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        return np.exp(1j * np.multiply.outer(x, wavenumbers)) @ coeffs
    return evaluate


class PullbackReport(NamedTuple):
    rows: List[ResultRow]
    fit: RateFit
    order0_values: List[float]
    improved: bool


def check_pullback_residual(kappa: TransitionMap, q: SymbolFunction, chi: Callable, h_list: Sequence[float],
                            grid: PeriodicGrid, t: float = 0.0, band: Tuple[float, Optional[float]] = (0.8, None),
                            seed: int = 0) -> PullbackReport:
    """Residual (chi o L) e^{-h q_kappa} (chi o L) - alpha_kappa(e^{-hq}) in L2 over h.

    When q is a differential operator and kappa is not affine, q_kappa is the
    exact transported Weyl symbol. Otherwise it is
    q(L, k xi) + (i/2) f d_xi q(L, k xi), which is exact for affine maps. The
    order-0 residual (without the f term in alpha) is reported alongside;
    ``improved`` says the first-order correction strictly lowers the residual
    at the finest h.
    """
    if q.dxi is None:
        raise ValueError(f"symbol {q.name!r} has no xi-derivative")
    x_new, xi = _local_coordinates(grid)
    kappa.check_overlap(x_new)
    coefficients = None if kappa.kind == 'affine' else differential_coefficients(q, t, grid.box_length)
    if coefficients is not None:
        transported_q = transported_weyl_symbol(kappa, coefficients, grid).values
    else:
        base = kappa.inverse(x_new)
        k = kappa.first(base)
        f = kappa.second(base) / k
        transported_q = q(t, (base,), (k * xi,)) + 0.5j * f * q.dxi(t, (base,), (k * xi,), 0)
    primal_base = kappa.inverse(grid.axis_points())
    cutoff = MultiplicationStep(grid, np.asarray(chi(primal_base), dtype=float))
    h_values = sorted((float(h) for h in h_list), reverse=True)
    residuals, order0 = [], []
    for h in h_values:
        p_hat = SampledSymbol(grid, np.broadcast_to(np.exp(-h * transported_q), symbol_shape(grid)))
        conjugated = cutoff.apply_array(cutoff.apply_array(quantize(p_hat).matrix().T).T)
        p_h = exp_symbol_function(q, t, h)
        for order, bucket in ((1, residuals), (0, order0)):
            alpha = quantize(pullback_symbol(kappa, p_h, chi, order, grid)).matrix()
            estimate = operator_norm([MatrixStep(grid, conjugated - alpha)], 0.0, 0.0, grid, seed=seed,
                                     max_iter=2000)
            bucket.append(estimate.value)
    rows = [ResultRow(h, v, f"pullback-residual-{kappa.kind}", 0.0, 0.0, 1.0, 1, grid.points_per_dim)
            for h, v in zip(h_values, residuals)]
    rows += [ResultRow(h, v, f"pullback-residual-order0-{kappa.kind}", 0.0, 0.0, 1.0, 1, grid.points_per_dim)
             for h, v in zip(h_values, order0)]
    fit = fit_rate(list(zip(h_values, residuals)), band, f"pullback-residual-{kappa.kind}", zero_tol=1e-13)
    improved = residuals[-1] < order0[-1]
    logger.info(f"[PULLBACK] {kappa.name}: order-1 {residuals[-1]:.3e} vs order-0 {order0[-1]:.3e} at h={h_values[-1]:g}")
    return PullbackReport(rows, fit, order0, bool(improved))
