# core/symbols.py

"""Time-dependent Weyl symbols q(t, x, xi): closures, sampling and calculus.

Symbols are supplied as closures over broadcastable coordinate tuples
``x = (x_1, ..., x_n)`` and ``xi = (xi_1, ..., xi_n)``. Sampling evaluates them on
the midpoint x-grid (2N points per axis) times the refined frequency lattice
(spacing pi/L, 2N points per axis). Derivatives use analytic closures when the
symbol provides them; otherwise x-derivatives are spectral on the midpoint grid
and xi-derivatives use fourth-order finite differences on the lattice.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.errors import EllipticityError, GridMismatchError, SymbolEvaluationError
from core.grid_core import PeriodicGrid, spectral_derivative
from utils.platform_utils import get_thread_count

logger = logging.getLogger(__name__)

EXP_CLIP = -745.0

Coordinates = Tuple[np.ndarray, ...]
Evaluator = Callable[[float, Coordinates, Coordinates], np.ndarray]
DerivativeEvaluator = Callable[[float, Coordinates, Coordinates, int], np.ndarray]


class EllipticityCertificate(NamedTuple):
    """q2 + Re q1 >= constant * |xi|^2 for |xi| >= radius."""
    constant: float
    radius: float = 1.0


class HolderCertificate(NamedTuple):
    """Hoelder exponent of t -> q(t) and a bound for its constant."""
    alpha: float = 1.0
    constant: float = 0.0


class SymbolFunction:
    """A time-dependent symbol with order, split and regularity metadata.

    ``time_profile`` optionally decomposes q(t) = sum_k c_k(t) q_k with
    time-independent q_k; reference solvers use it to avoid re-sampling.
    ``time_change`` is set for separable symbols q(t) = c(t) q_0 and holds the
    antiderivative of c, so the exact flow is exp(-time_change(t) q_0^w).
    """

    def __init__(self, evaluator: Evaluator, order: float = 2.0, dim: int = 1,
                 split: Optional[Tuple[Evaluator, Evaluator]] = None,
                 ellipticity: Optional[EllipticityCertificate] = None,
                 holder: Optional[HolderCertificate] = None,
                 dx: Optional[DerivativeEvaluator] = None,
                 dxi: Optional[DerivativeEvaluator] = None,
                 x_independent: bool = False,
                 time_dependent: bool = True,
                 time_profile: Optional[List[Tuple[Callable[[float], float], 'SymbolFunction']]] = None,
                 time_change: Optional[Callable[[float], float]] = None,
                 name: str = 'symbol'):
        self.evaluator = evaluator
        self.order = float(order)
        self.dim = int(dim)
        self.split = split
        self.ellipticity = ellipticity
        self.holder = holder or HolderCertificate()
        self.dx = dx
        self.dxi = dxi
        self.x_independent = bool(x_independent)
        self.time_dependent = bool(time_dependent)
        self.time_profile = time_profile
        self.time_change = time_change
        self.name = name

    def __call__(self, t: float, x: Coordinates, xi: Coordinates) -> np.ndarray:
        return self.evaluator(t, x, xi)

    def __repr__(self):
        return f"SymbolFunction({self.name!r}, order={self.order}, dim={self.dim})"

    @classmethod
    def stationary(cls, func: Callable[[Coordinates, Coordinates], np.ndarray], order: float = 0.0,
                   dim: int = 1, dx=None, dxi=None, x_independent: bool = False,
                   name: str = 'stationary') -> 'SymbolFunction':
        """Wraps a time-independent closure func(x, xi)."""
        return cls(lambda t, x, xi: func(x, xi), order=order, dim=dim,
                   dx=None if dx is None else (lambda t, x, xi, axis: dx(x, xi, axis)),
                   dxi=None if dxi is None else (lambda t, x, xi, axis: dxi(x, xi, axis)),
                   x_independent=x_independent, time_dependent=False, name=name)

    def frozen(self, t: float) -> 'SymbolFunction':
        """Time-independent copy evaluated at time t."""
        def freeze(fn):
            if fn is None:
                return None
            return lambda _t, x, xi, *rest: fn(t, x, xi, *rest)
        split = None
        if self.split is not None:
            split = (freeze(self.split[0]), freeze(self.split[1]))
        return SymbolFunction(freeze(self.evaluator), order=self.order, dim=self.dim, split=split,
                              ellipticity=self.ellipticity, holder=HolderCertificate(1.0, 0.0),
                              dx=freeze(self.dx), dxi=freeze(self.dxi),
                              x_independent=self.x_independent, time_dependent=False,
                              name=f"{self.name}@{t:g}")


class SymbolTerm(NamedTuple):
    """coefficient * trig(2*pi*mode.x/L) * xi^power with trig in {const, cos, sin}."""
    coefficient: complex
    kind: str = 'const'
    mode: Tuple[int, ...] = ()
    power: Tuple[int, ...] = ()


class TrigPolynomial:
    """Finite sum of SymbolTerms, trigonometric in x and polynomial in xi."""

    def __init__(self, terms: Sequence[SymbolTerm], dim: int, box_length: float):
        self.dim = int(dim)
        self.box_length = float(box_length)
        self.terms = [self._normalize(term) for term in terms]

    def _normalize(self, term: SymbolTerm) -> SymbolTerm:
        if term.kind not in ('const', 'cos', 'sin'):
            raise ValueError(f"unknown trig kind {term.kind!r}")
        mode = tuple(int(m) for m in term.mode) or (0,) * self.dim
        power = tuple(int(p) for p in term.power) or (0,) * self.dim
        if len(mode) != self.dim or len(power) != self.dim:
            raise ValueError(f"term {term} does not match dimension {self.dim}")
        if any(p < 0 for p in power):
            raise ValueError(f"negative xi power in {term}")
        kind = 'const' if not any(mode) and term.kind == 'cos' else term.kind
        return SymbolTerm(complex(term.coefficient), kind, mode, power)

    @property
    def x_independent(self) -> bool:
        return all(term.kind == 'const' or not any(term.mode) for term in self.terms)

    @property
    def degree(self) -> int:
        return max((sum(term.power) for term in self.terms), default=0)

    @property
    def is_real(self) -> bool:
        return all(term.coefficient.imag == 0 for term in self.terms)

    def _phase(self, term: SymbolTerm, x: Coordinates):
        scale = 2 * np.pi / self.box_length
        return sum(scale * m * xa for m, xa in zip(term.mode, x))

    def _trig(self, term: SymbolTerm, x: Coordinates, derivative_axis: Optional[int] = None):
        if term.kind == 'const':
            return 0.0 if derivative_axis is not None else 1.0
        if term.kind == 'sin' and not any(term.mode):
            return 0.0
        theta = self._phase(term, x)
        if derivative_axis is None:
            return np.cos(theta) if term.kind == 'cos' else np.sin(theta)
        k = 2 * np.pi * term.mode[derivative_axis] / self.box_length
        return -k * np.sin(theta) if term.kind == 'cos' else k * np.cos(theta)

    @staticmethod
    def _monomial(power: Tuple[int, ...], xi: Coordinates, derivative_axis: Optional[int] = None):
        result = 1.0
        for axis, (p, xa) in enumerate(zip(power, xi)):
            if axis == derivative_axis:
                if p == 0:
                    return 0.0
                result = result * (p * xa ** (p - 1))
            elif p:
                result = result * xa ** p
        return result

    def _accumulate(self, x, xi, x_axis=None, xi_axis=None):
        shape = np.broadcast(*x, *xi).shape
        total = np.zeros(shape, dtype=complex)
        for term in self.terms:
            trig = self._trig(term, x, x_axis)
            mono = self._monomial(term.power, xi, xi_axis)
            if np.isscalar(trig) and trig == 0.0 or np.isscalar(mono) and mono == 0.0:
                continue
            total = total + term.coefficient * trig * mono
        return total

    def evaluate(self, x: Coordinates, xi: Coordinates) -> np.ndarray:
        return self._accumulate(x, xi)

    def derivative_x(self, x: Coordinates, xi: Coordinates, axis: int) -> np.ndarray:
        return self._accumulate(x, xi, x_axis=axis)

    def derivative_xi(self, x: Coordinates, xi: Coordinates, axis: int) -> np.ndarray:
        return self._accumulate(x, xi, xi_axis=axis)


def holder_profile(alpha: float) -> Callable[[float], float]:
    """t -> t^alpha on t >= 0."""
    alpha = float(alpha)
    if alpha == 1.0:
        return lambda t: float(t)
    return lambda t: float(max(t, 0.0)) ** alpha


class DyadicProfile:
    """c(t) = 1 + amplitude * sum_{k < levels} 2^{-k alpha} cos(2 pi 2^k t / period).

    A truncated Weierstrass sum: uniformly alpha-Hoelder in t, and rough at
    every dyadic scale the step sizes reach, so Riemann sums of c over a
    uniform grid of step h miss the integral by a term of order h^alpha.
    """

    def __init__(self, alpha: float, amplitude: float = 0.25, levels: int = 24, period: float = 1.0):
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"dyadic profiles need 0 < alpha < 1, got {alpha}")
        if period <= 0 or levels < 1:
            raise ValueError("dyadic profiles need a positive period and at least one level")
        self.alpha = float(alpha)
        self.amplitude = float(amplitude)
        self.levels = int(levels)
        self.period = float(period)
        self._frequencies = 2.0 ** np.arange(self.levels)
        self._weights = self._frequencies ** -self.alpha
        if self.lower_bound() <= 0:
            raise ValueError(f"amplitude {amplitude} makes the dyadic profile non-positive")

    def __repr__(self):
        return f"DyadicProfile(alpha={self.alpha}, amplitude={self.amplitude})"

    def _phases(self, t: float) -> np.ndarray:
        # reduced mod 1 before scaling by 2 pi so high levels keep their phase
        return 2 * np.pi * np.mod(self._frequencies * (float(t) / self.period), 1.0)

    def __call__(self, t: float) -> float:
        return float(1.0 + self.amplitude * np.sum(self._weights * np.cos(self._phases(t))))

    def integral(self, t: float) -> float:
        """int_0^t c."""
        scale = self.period / (2 * np.pi * self._frequencies)
        return float(t + self.amplitude * np.sum(self._weights * scale * np.sin(self._phases(t))))

    def lower_bound(self) -> float:
        return 1.0 - self.amplitude * float(np.sum(self._weights))

    def holder_constant(self) -> float:
        """A bound for |c(t) - c(s)| / |t - s|^alpha, summing min(2, 2 pi 2^k |t - s| / period) per level."""
        rising = 2 * np.pi * 2.0 ** (1 - self.alpha) / (2.0 ** (1 - self.alpha) - 1)
        falling = 2.0 / (1 - 2.0 ** -self.alpha)
        return self.amplitude * (rising + falling) / self.period ** self.alpha


def separable_symbol(base: SymbolFunction, profile: DyadicProfile, name: str) -> SymbolFunction:
    """q(t) = c(t) q_0 for a time-independent q_0 and a positive profile c."""
    if base.time_dependent:
        raise ValueError(f"separable symbols need a time-independent base, got {base.name!r}")

    def scaled(fn):
        if fn is None:
            return None
        return lambda t, x, xi, *rest: profile(t) * fn(0.0, x, xi, *rest)

    split = None if base.split is None else (scaled(base.split[0]), scaled(base.split[1]))
    ellipticity = None
    if base.ellipticity is not None:
        ellipticity = base.ellipticity._replace(constant=base.ellipticity.constant * profile.lower_bound())
    return SymbolFunction(scaled(base.evaluator), order=base.order, dim=base.dim, split=split,
                          ellipticity=ellipticity,
                          holder=HolderCertificate(profile.alpha, profile.holder_constant()),
                          dx=scaled(base.dx), dxi=scaled(base.dxi), x_independent=base.x_independent,
                          time_dependent=True, time_profile=[(profile, base)],
                          time_change=profile.integral, name=name)


def trig_polynomial_symbol(principal: Sequence[SymbolTerm], lower: Sequence[SymbolTerm] = (),
                           box_length: float = 2 * np.pi, dim: int = 1,
                           principal_increment: Sequence[SymbolTerm] = (),
                           lower_increment: Sequence[SymbolTerm] = (),
                           alpha: float = 1.0,
                           ellipticity: Optional[EllipticityCertificate] = None,
                           name: str = 'trig-polynomial') -> SymbolFunction:
    """Builds q(t) = (q2 + q1) + t^alpha (q2' + q1') from trig-polynomial pieces.

    ``principal`` terms form the real part q2; ``lower`` terms form q1. The
    increment pieces are scaled by t^alpha and give the Hoelder family.
    """
    base_q2 = TrigPolynomial(principal, dim, box_length)
    base_q1 = TrigPolynomial(lower, dim, box_length)
    inc_q2 = TrigPolynomial(principal_increment, dim, box_length)
    inc_q1 = TrigPolynomial(lower_increment, dim, box_length)
    if not (base_q2.is_real and inc_q2.is_real):
        raise ValueError("principal (q2) coefficients must be real")
    has_increment = bool(inc_q2.terms or inc_q1.terms)
    profile = holder_profile(alpha) if has_increment else (lambda t: 0.0)
    pieces = (base_q2, base_q1, inc_q2, inc_q1)

    def combine(method, t, x, xi, *rest):
        base = getattr(base_q2, method)(x, xi, *rest) + getattr(base_q1, method)(x, xi, *rest)
        if not has_increment:
            return base
        tau = profile(t)
        if tau == 0.0:
            return base
        return base + tau * (getattr(inc_q2, method)(x, xi, *rest) + getattr(inc_q1, method)(x, xi, *rest))

    def q2(t, x, xi):
        value = base_q2.evaluate(x, xi)
        if has_increment and profile(t):
            value = value + profile(t) * inc_q2.evaluate(x, xi)
        return value.real

    def q1(t, x, xi):
        value = base_q1.evaluate(x, xi)
        if has_increment and profile(t):
            value = value + profile(t) * inc_q1.evaluate(x, xi)
        return value

    def part(poly_a, poly_b, label):
        return SymbolFunction(lambda t, x, xi: poly_a.evaluate(x, xi) + poly_b.evaluate(x, xi),
                              order=float(max(poly_a.degree, poly_b.degree)), dim=dim,
                              dx=lambda t, x, xi, axis: poly_a.derivative_x(x, xi, axis) + poly_b.derivative_x(x, xi, axis),
                              dxi=lambda t, x, xi, axis: poly_a.derivative_xi(x, xi, axis) + poly_b.derivative_xi(x, xi, axis),
                              x_independent=poly_a.x_independent and poly_b.x_independent,
                              time_dependent=False, name=label)

    time_profile = [((lambda t: 1.0), part(base_q2, base_q1, f"{name}:base"))]
    if has_increment:
        time_profile.append((profile, part(inc_q2, inc_q1, f"{name}:increment")))

    return SymbolFunction(
        lambda t, x, xi: combine('evaluate', t, x, xi),
        order=float(max(p.degree for p in pieces)), dim=dim,
        split=(q2, q1), ellipticity=ellipticity,
        holder=HolderCertificate(float(alpha) if has_increment else 1.0, 0.0),
        dx=lambda t, x, xi, axis: combine('derivative_x', t, x, xi, axis),
        dxi=lambda t, x, xi, axis: combine('derivative_xi', t, x, xi, axis),
        x_independent=all(p.x_independent for p in pieces),
        time_dependent=has_increment, time_profile=time_profile, name=name)


def japanese_bracket_symbol(power: float, dim: int = 1) -> SymbolFunction:
    """<xi>^power as a stationary symbol with analytic derivatives."""
    def bracket_sq(xi):
        return 1.0 + sum(component ** 2 for component in xi)

    def value(x, xi):
        return bracket_sq(xi) ** (power / 2) + 0j * x[0]

    def d_xi(x, xi, axis):
        return power * xi[axis] * bracket_sq(xi) ** (power / 2 - 1) + 0j * x[0]

    def d_x(x, xi, axis):
        return np.zeros(np.broadcast(*x, *xi).shape, dtype=complex)

    return SymbolFunction.stationary(value, order=power, dim=dim, dx=d_x, dxi=d_xi,
                                     x_independent=True, name=f"<xi>^{power:g}")


def multiplication_symbol(func: Callable[[Coordinates], np.ndarray],
                          derivative: Optional[Callable[[Coordinates, int], np.ndarray]] = None,
                          dim: int = 1, name: str = 'multiplier') -> SymbolFunction:
    """A symbol a(x) independent of xi."""
    def value(x, xi):
        return np.broadcast_to(np.asarray(func(x), dtype=complex), np.broadcast(*x, *xi).shape)

    def d_xi(x, xi, axis):
        return np.zeros(np.broadcast(*x, *xi).shape, dtype=complex)

    d_x = None
    if derivative is not None:
        def d_x(x, xi, axis):
            return np.broadcast_to(np.asarray(derivative(x, axis), dtype=complex),
                                   np.broadcast(*x, *xi).shape)
    return SymbolFunction.stationary(value, order=0.0, dim=dim, dx=d_x, dxi=d_xi, name=name)


def symbol_shape(grid: PeriodicGrid) -> Tuple[int, ...]:
    return (2 * grid.points_per_dim,) * (2 * grid.dim)


def symbol_axes(grid: PeriodicGrid, x_values: Optional[Sequence[np.ndarray]] = None,
                xi_values: Optional[np.ndarray] = None) -> Tuple[Coordinates, Coordinates]:
    """Broadcastable coordinate tuples: x axes first, then xi axes."""
    n = grid.dim
    mid = grid.midpoint_axis() if x_values is None else None
    freq = grid.refined_frequency_axis() if xi_values is None else xi_values
    xs, xis = [], []
    for axis in range(n):
        shape = [1] * (2 * n)
        shape[axis] = -1
        values = mid if x_values is None else x_values[axis]
        xs.append(np.asarray(values, dtype=float).reshape(shape))
        shape = [1] * (2 * n)
        shape[n + axis] = -1
        xis.append(np.asarray(freq, dtype=float).reshape(shape))
    return tuple(xs), tuple(xis)


class SampledSymbol:
    """A symbol sampled on (midpoint x-grid) x (refined frequency lattice).

    ``derivatives`` may hold exact first derivatives keyed by ('x', axis) or
    ('xi', axis); they are carried through products, sums and exponentials.
    """

    def __init__(self, grid: PeriodicGrid, values: np.ndarray, time: Optional[float] = None,
                 derivatives: Optional[Dict[Tuple[str, int], np.ndarray]] = None, name: str = ''):
        values = np.asarray(values, dtype=complex)
        expected = symbol_shape(grid)
        if values.shape != expected:
            try:
                values = np.broadcast_to(values, expected).copy()
            except ValueError:
                raise GridMismatchError(f"symbol shape {values.shape} does not match {expected}")
        self.grid = grid
        self.values = values
        self.time = time
        self.derivatives = dict(derivatives or {})
        self.name = name

    def __repr__(self):
        return f"SampledSymbol({self.name!r}, grid={self.grid}, t={self.time})"

    @property
    def dim(self) -> int:
        return self.grid.dim

    def _check(self, other: 'SampledSymbol'):
        if other.grid != self.grid:
            raise GridMismatchError(f"symbol grids differ: {self.grid} vs {other.grid}")

    def _combined_time(self, other: 'SampledSymbol'):
        return self.time if self.time is not None else other.time

    def conj(self) -> 'SampledSymbol':
        return SampledSymbol(self.grid, np.conj(self.values), self.time,
                             {key: np.conj(val) for key, val in self.derivatives.items()},
                             f"conj({self.name})")

    def __neg__(self):
        return self * -1.0

    def __add__(self, other):
        if isinstance(other, SampledSymbol):
            self._check(other)
            derivs = {key: self.derivatives[key] + other.derivatives[key]
                      for key in self.derivatives if key in other.derivatives}
            return SampledSymbol(self.grid, self.values + other.values,
                                 self._combined_time(other), derivs)
        return SampledSymbol(self.grid, self.values + other, self.time, self.derivatives)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if isinstance(other, SampledSymbol):
            self._check(other)
            derivs = {key: self.values * other.derivatives[key] + other.values * self.derivatives[key]
                      for key in self.derivatives if key in other.derivatives}
            return SampledSymbol(self.grid, self.values * other.values,
                                 self._combined_time(other), derivs)
        scalar = complex(other)
        return SampledSymbol(self.grid, self.values * scalar, self.time,
                             {key: val * scalar for key, val in self.derivatives.items()})

    __rmul__ = __mul__

    def is_real(self, tol: float = 0.0) -> bool:
        return bool(np.max(np.abs(self.values.imag), initial=0.0) <= tol)

    def primal_slice(self) -> np.ndarray:
        """Samples at primal points (even midpoint indices) and integer frequencies."""
        n = self.dim
        index = tuple([slice(0, None, 2)] * n + [slice(0, None, 2)] * n)
        return self.values[index]


def _evaluate_checked(func, t, x, xi, shape, label):
    values = np.asarray(func(t, x, xi), dtype=complex)
    values = np.broadcast_to(values, shape)
    if not np.all(np.isfinite(values)):
        flat = int(np.argmax(~np.isfinite(values).reshape(-1)))
        index = np.unravel_index(flat, shape)
        point_x = [float(np.broadcast_to(xa, shape)[index]) for xa in x]
        point_xi = [float(np.broadcast_to(xa, shape)[index]) for xa in xi]
        raise SymbolEvaluationError(
            f"{label} is not finite at x={point_x}, xi={point_xi}", point_x, point_xi)
    return values


def _sample_array(func, t: float, grid: PeriodicGrid, label: str) -> np.ndarray:
    shape = symbol_shape(grid)
    x, xi = symbol_axes(grid)
    threads = get_thread_count()
    if grid.dim == 1 or threads <= 1:
        return np.array(_evaluate_checked(func, t, x, xi, shape, label))
    # slabs along the first x axis
    out = np.empty(shape, dtype=complex)
    slab_shape = (1,) + shape[1:]

    def fill(row):
        x_row = (x[0][row:row + 1],) + x[1:]
        out[row:row + 1] = _evaluate_checked(func, t, x_row, xi, slab_shape, label)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fill, range(shape[0])))
    return out


def sample(sym: SymbolFunction, t: float, grid: PeriodicGrid) -> SampledSymbol:
    """Evaluates sym(t) on the midpoint x-grid times the refined frequency lattice."""
    if sym.dim != grid.dim:
        raise GridMismatchError(f"symbol dimension {sym.dim} does not match grid dimension {grid.dim}")
    values = _sample_array(sym.evaluator, t, grid, sym.name)
    derivatives = {}
    if sym.dx is not None and sym.dxi is not None:
        for axis in range(grid.dim):
            derivatives[('x', axis)] = _sample_array(
                lambda tt, x, xi, a=axis: sym.dx(tt, x, xi, a), t, grid, f"d_x{axis} {sym.name}")
            derivatives[('xi', axis)] = _sample_array(
                lambda tt, x, xi, a=axis: sym.dxi(tt, x, xi, a), t, grid, f"d_xi{axis} {sym.name}")
    time = t if sym.time_dependent else None
    return SampledSymbol(grid, values, time, derivatives, sym.name)


def _safe_exp(exponent: np.ndarray) -> np.ndarray:
    real = exponent.real
    out = np.exp(np.maximum(real, EXP_CLIP) + 1j * exponent.imag)
    out[real < EXP_CLIP] = 0.0
    return out


def exp_symbol(sym: SymbolFunction, t: float, h: float, grid: PeriodicGrid) -> SampledSymbol:
    """Pointwise e^{-h q(t, x, xi)}; identically 1 at h = 0."""
    if h < 0:
        raise ValueError(f"step length must be nonnegative, got {h}")
    shape = symbol_shape(grid)
    if h == 0:
        derivs = {}
        if sym.dx is not None and sym.dxi is not None:
            for axis in range(grid.dim):
                derivs[('x', axis)] = np.zeros(shape, dtype=complex)
                derivs[('xi', axis)] = np.zeros(shape, dtype=complex)
        return SampledSymbol(grid, np.ones(shape, dtype=complex), t, derivs, f"exp(0*{sym.name})")
    q = sample(sym, t, grid)
    values = _safe_exp(-h * q.values)
    derivs = {key: -h * values * val for key, val in q.derivatives.items()}
    return SampledSymbol(grid, values, t, derivs, f"exp(-{h:g}*{sym.name})")


def exp_symbol_function(sym: SymbolFunction, t: float, h: float) -> SymbolFunction:
    """Closure form of e^{-h q(t)} with exact first derivatives when q has them."""
    def value(x, xi):
        return _safe_exp(-h * np.asarray(sym(t, x, xi), dtype=complex))

    d_x = d_xi = None
    if sym.dx is not None:
        def d_x(x, xi, axis):
            return -h * value(x, xi) * sym.dx(t, x, xi, axis)
    if sym.dxi is not None:
        def d_xi(x, xi, axis):
            return -h * value(x, xi) * sym.dxi(t, x, xi, axis)
    return SymbolFunction.stationary(value, order=0.0, dim=sym.dim, dx=d_x, dxi=d_xi,
                                     x_independent=sym.x_independent,
                                     name=f"exp(-{h:g}*{sym.name})")


def xi_difference(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    f = np.moveaxis(values, axis, -1)
    out = np.empty_like(f)
    out[..., 2:-2] = (-f[..., 4:] + 8 * f[..., 3:-1] - 8 * f[..., 1:-3] + f[..., :-4]) / 12
    out[..., 0] = (-25 * f[..., 0] + 48 * f[..., 1] - 36 * f[..., 2] + 16 * f[..., 3] - 3 * f[..., 4]) / 12
    out[..., 1] = (-3 * f[..., 0] - 10 * f[..., 1] + 18 * f[..., 2] - 6 * f[..., 3] + f[..., 4]) / 12
    out[..., -1] = (25 * f[..., -1] - 48 * f[..., -2] + 36 * f[..., -3] - 16 * f[..., -4] + 3 * f[..., -5]) / 12
    out[..., -2] = (3 * f[..., -1] + 10 * f[..., -2] - 18 * f[..., -3] + 6 * f[..., -4] - f[..., -5]) / 12
    return np.moveaxis(out / spacing, -1, axis)


def derivative(a: SampledSymbol, alpha: Sequence[int], beta: Sequence[int]) -> np.ndarray:
    """d_x^alpha d_xi^beta a on the sample grid."""
    n = a.dim
    alpha, beta = tuple(alpha), tuple(beta)
    if len(alpha) != n or len(beta) != n:
        raise ValueError(f"multi-indices must have length {n}")
    if sum(alpha) + sum(beta) == 1:
        key = ('x', alpha.index(1)) if sum(alpha) else ('xi', beta.index(1))
        if key in a.derivatives:
            return a.derivatives[key]
    values = a.values
    length = a.grid.box_length
    for axis, order in enumerate(alpha):
        if order:
            values = spectral_derivative(values, length, order, axis=axis)
    spacing = np.pi / length
    for axis, order in enumerate(beta):
        for _ in range(order):
            values = xi_difference(values, n + axis, spacing)
    return values


def unit_index(n: int, axis: int) -> Tuple[int, ...]:
    return tuple(1 if k == axis else 0 for k in range(n))


def poisson_bracket(a: SampledSymbol, b: SampledSymbol) -> SampledSymbol:
    """{a, b} = sum_j d_xi_j a d_x_j b - d_x_j a d_xi_j b."""
    if a.grid != b.grid:
        raise GridMismatchError(f"symbol grids differ: {a.grid} vs {b.grid}")
    if a.time is not None and b.time is not None and a.time != b.time:
        raise ValueError(f"symbols sampled at different times {a.time} and {b.time}")
    n = a.dim
    zero = (0,) * n
    total = np.zeros_like(a.values)
    for axis in range(n):
        unit = unit_index(n, axis)
        forward = derivative(a, zero, unit) * derivative(b, unit, zero)
        backward = derivative(a, unit, zero) * derivative(b, zero, unit)
        total = total + (forward - backward)
    time = a.time if a.time is not None else b.time
    return SampledSymbol(a.grid, total, time, name=f"{{{a.name},{b.name}}}")


class SeminormReport(NamedTuple):
    """Lattice sups of <xi>^{-m+|beta|} |d_x^alpha d_xi^beta a|."""
    order: float
    entries: Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], float]

    def value(self, alpha: Sequence[int], beta: Sequence[int]) -> float:
        return self.entries[(tuple(alpha), tuple(beta))]

    def max_entry(self) -> float:
        return max(self.entries.values(), default=0.0)


def _multi_indices(n: int, max_order: int):
    for total in range(max_order + 1):
        for combo in itertools.product(range(total + 1), repeat=2 * n):
            if sum(combo) == total:
                yield tuple(combo[:n]), tuple(combo[n:])


def seminorms(a: SampledSymbol, m: float, max_order: int) -> SeminormReport:
    if max_order > 4 or max_order < 0:
        raise ValueError(f"max_order must lie in 0..4, got {max_order}")
    _, xi = symbol_axes(a.grid)
    bracket_sq = 1.0 + sum(component ** 2 for component in xi)
    entries = {}
    for alpha, beta in _multi_indices(a.dim, max_order):
        weight = bracket_sq ** ((-m + sum(beta)) / 2)
        values = derivative(a, alpha, beta)
        entries[(alpha, beta)] = float(np.max(np.abs(values) * weight))
    return SeminormReport(float(m), entries)


def verify_ellipticity(sym: SymbolFunction, t: float, grid: PeriodicGrid) -> Tuple[bool, float]:
    """Returns (ok, margin) with margin = min (q2 + Re q1)/|xi|^2 over |xi| >= radius."""
    if sym.split is None:
        raise EllipticityError(f"symbol {sym.name!r} carries no (q2, q1) split")
    certificate = sym.ellipticity or EllipticityCertificate(0.0, 1.0)
    n = grid.dim
    freq = grid.frequency_axis()
    x, xi = symbol_axes(grid, xi_values=freq)
    shape = (2 * grid.points_per_dim,) * n + (grid.points_per_dim,) * n
    q2, q1 = sym.split
    real_part = (np.broadcast_to(np.asarray(q2(t, x, xi)).real, shape)
                 + np.broadcast_to(np.asarray(q1(t, x, xi)).real, shape))
    norm_sq = np.broadcast_to(sum(component ** 2 for component in xi), shape)
    mask = norm_sq >= certificate.radius ** 2
    if not np.any(mask):
        raise EllipticityError(
            f"no lattice frequency with |xi| >= {certificate.radius}; grid too coarse")
    margin = float(np.min(real_part[mask] / norm_sq[mask]))
    ok = margin >= certificate.constant - 1e-12 * max(1.0, certificate.constant)
    logger.debug(f"[SYMBOL] ellipticity {sym.name}: margin={margin:.6g} required={certificate.constant}")
    return ok, margin


def lattice_edge_decay(sym: SymbolFunction, t: float, grid: PeriodicGrid) -> float:
    """min over x of Re q on the outer shell of the frequency lattice."""
    q = sample(sym, t, grid).values.real
    n = grid.dim
    _, xi = symbol_axes(grid)
    shell = np.zeros(q.shape, dtype=bool)
    edge = np.max(np.abs(grid.refined_frequency_axis()))
    for component in xi:
        shell |= np.broadcast_to(np.abs(component) >= edge - 1e-12, q.shape)
    return float(np.min(q[shell]))


def resolved_steps(sym: SymbolFunction, t: float, grid: PeriodicGrid, h_list: Sequence[float],
                   tol: float = 1e-6) -> Tuple[List[float], List[float]]:
    """Splits h_list into step sizes whose e^{-hq} decays below tol at the lattice edge and the rest."""
    decay = lattice_edge_decay(sym, t, grid)
    kept, dropped = [], []
    for h in h_list:
        edge_value = np.exp(-h * decay) if decay > 0 else 1.0
        (kept if h == 0 or edge_value <= tol else dropped).append(float(h))
    if dropped:
        logger.info(f"[SYMBOL] dropped unresolved step sizes {dropped} (edge decay {decay:.4g})")
    return kept, dropped


class DampingRecord(NamedTuple):
    """sup-norm seminorm of h^m <xi>^{2m} e^{-hq} at one h."""
    h: float
    exponent: float
    seminorm: float


def damping_uniformity_sweep(sym: SymbolFunction, t: float, grid: PeriodicGrid,
                             h_list: Sequence[float], exponents: Sequence[float] = (0.0, 0.5, 1.0),
                             max_order: int = 2) -> List[DampingRecord]:
    """Seminorms of h^m <xi>^{2m} p_h in S^0; bounded uniformly in h for elliptic q."""
    _, xi = symbol_axes(grid)
    bracket_sq = 1.0 + sum(component ** 2 for component in xi)
    records = []
    for h in h_list:
        p = exp_symbol(sym, t, h, grid)
        for m in exponents:
            scaled = SampledSymbol(grid, (h ** m) * bracket_sq ** m * p.values, p.time)
            report = seminorms(scaled, 0.0, max_order)
            records.append(DampingRecord(float(h), float(m), report.max_entry()))
    return records


def dissipation_symbol(sym: SymbolFunction, t: float, h: float, grid: PeriodicGrid) -> SampledSymbol:
    """nu_h = (1 - |e^{-hq}|^2) / h."""
    if h <= 0:
        raise ValueError("dissipation symbol needs h > 0")
    p = exp_symbol(sym, t, h, grid)
    return SampledSymbol(grid, (1.0 - np.abs(p.values) ** 2) / h, p.time, name=f"nu_{h:g}")


def dissipation_symbol_sweep(sym: SymbolFunction, t: float, grid: PeriodicGrid,
                             h_list: Sequence[float], max_order: int = 2) -> List[Tuple[float, SeminormReport]]:
    """S^2 seminorm reports of nu_h over an h-sweep."""
    return [(float(h), seminorms(dissipation_symbol(sym, t, h, grid), 2.0, max_order)) for h in h_list]
