# core/propagator.py

"""Single steps, the multi-product approximation and reference solvers.

A step P_(t', t) is the Weyl quantization of e^{-(t'-t) q(t, x, xi)}. The
multi-product W_(P, t) composes full steps over the knots of a subdivision and
closes with a partial step from the last knot before t.
"""
import bisect
import logging
import threading
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla
from scipy.integrate import quad_vec

from core.errors import ConvergenceError, GridMismatchError
from core.grid_core import GridField, PeriodicGrid
from core.symbols import SymbolFunction, exp_symbol, sample
from core.weyl import QuantizedOperator, quantize
from utils.platform_utils import get_thread_count

logger = logging.getLogger(__name__)

MAX_HALVINGS = 20
MIN_TOLERANCE = 1e-11
FINE_MULTIPRODUCT_STEPS = 4096
RK4_STABILITY = 2.5
SOLVERS = ('auto', 'exact_multiplier', 'method_of_lines', 'rk4', 'magnus', 'fine_multiproduct')


class Subdivision(NamedTuple):
    """Strictly increasing knots 0 = t_0 < ... < t_N = T."""
    knots: Tuple[float, ...]

    @classmethod
    def create(cls, knots: Sequence[float]) -> 'Subdivision':
        values = tuple(float(k) for k in knots)
        if len(values) < 2:
            raise ValueError("a subdivision needs at least two knots")
        if values[0] != 0.0:
            raise ValueError(f"first knot must be 0, got {values[0]}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("knots must be strictly increasing")
        return cls(values)

    @classmethod
    def uniform(cls, T: float, steps: int) -> 'Subdivision':
        if steps < 1:
            raise ValueError(f"number of steps must be >= 1, got {steps}")
        if not T > 0:
            raise ValueError(f"final time must be positive, got {T}")
        knots = [T * k / steps for k in range(steps)] + [float(T)]
        return cls.create(knots)

    @property
    def final_time(self) -> float:
        return self.knots[-1]

    @property
    def steps(self) -> int:
        return len(self.knots) - 1

    @property
    def mesh_size(self) -> float:
        return max(b - a for a, b in zip(self.knots, self.knots[1:]))

    def locate(self, t: float) -> int:
        """Index k with t_k <= t <= t_{k+1}; k = N-1 at t = T."""
        if t < 0 or t > self.final_time:
            raise ValueError(f"time {t} outside [0, {self.final_time}]")
        return min(bisect.bisect_right(self.knots, t) - 1, self.steps - 1)


def step(symbols: SymbolFunction, t: float, t_prime: float, grid: PeriodicGrid,
         path: str = 'fft') -> QuantizedOperator:
    """P_(t', t) = quantize(e^{-(t'-t) q(t)})."""
    if t_prime < t:
        raise ValueError(f"step needs t <= t', got t={t}, t'={t_prime}")
    return quantize(exp_symbol(symbols, t, t_prime - t, grid), path=path)


class MultiProduct:
    """W_(P, t) for one symbol family, subdivision and grid.

    Full-step factors are built lazily and cached per knot; the cache is filled
    under a lock and only read afterwards.
    """

    def __init__(self, symbols: SymbolFunction, subdivision: Subdivision, grid: PeriodicGrid,
                 path: str = 'fft'):
        if symbols.dim != grid.dim:
            raise GridMismatchError(f"symbol dimension {symbols.dim} does not match grid {grid.dim}")
        self.symbols = symbols
        self.subdivision = subdivision
        self.grid = grid
        self.path = path
        self._factors: Dict[int, QuantizedOperator] = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"MultiProduct({self.symbols.name!r}, steps={self.subdivision.steps}, grid={self.grid})"

    def factor(self, k: int) -> QuantizedOperator:
        """Full step P_(t_{k+1}, t_k)."""
        with self._lock:
            op = self._factors.get(k)
            if op is None:
                knots = self.subdivision.knots
                op = step(self.symbols, knots[k], knots[k + 1], self.grid, self.path)
                self._factors[k] = op
            return op

    def _tail(self, t: float, k: int) -> Optional[QuantizedOperator]:
        start = self.subdivision.knots[k]
        if t == start:
            return None
        if t == self.subdivision.knots[k + 1]:
            return self.factor(k)
        return step(self.symbols, start, t, self.grid, self.path)

    def apply_array(self, t: float, data: np.ndarray) -> np.ndarray:
        k = self.subdivision.locate(t)
        out = np.asarray(data, dtype=complex)
        for i in range(k):
            out = self.factor(i).apply_array(out)
        tail = self._tail(t, k)
        return out if tail is None else tail.apply_array(out)

    def apply(self, t: float, u0: GridField) -> GridField:
        if u0.grid != self.grid:
            raise GridMismatchError(f"field grid {u0.grid} does not match {self.grid}")
        return GridField(self.grid, self.apply_array(t, u0.flat()).reshape(self.grid.shape))

    def knot_arrays(self, data: np.ndarray) -> List[np.ndarray]:
        """W_(P, t_k) data for k = 0..N, computed sequentially."""
        current = np.asarray(data, dtype=complex)
        values = [current]
        for k in range(self.subdivision.steps):
            current = self.factor(k).apply_array(current)
            values.append(current)
        return values

    def matrix(self, t: float) -> np.ndarray:
        return self.apply_array(t, np.eye(self.grid.size, dtype=complex))


def multiproduct_apply(mp: MultiProduct, t: float, u0: GridField) -> GridField:
    return mp.apply(t, u0)


class ReferenceSolution(NamedTuple):
    """How a reference evolution was obtained."""
    solver: str
    tolerance: float
    steps: int
    halvings: int = 0
    certified: bool = False


Generator = Callable[[float], np.ndarray]


def _rk4_integrate(generator: Generator, t0: float, t1: float, U0: np.ndarray, steps: int) -> np.ndarray:
    h = (t1 - t0) / steps
    U = U0
    for i in range(steps):
        t = t0 + i * h
        A0, Am, A1 = generator(t), generator(t + h / 2), generator(t + h)
        k1 = A0 @ U
        k2 = Am @ (U + h / 2 * k1)
        k3 = Am @ (U + h / 2 * k2)
        k4 = A1 @ (U + h * k3)
        U = U + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return U


def _lawson_integrate(generator: Generator, t0: float, t1: float, U0: np.ndarray, steps: int) -> np.ndarray:
    """RK4 on the equation in the frame of the step-midpoint generator (integrating factor)."""
    h = (t1 - t0) / steps
    U = U0
    for i in range(steps):
        t = t0 + i * h
        frozen = generator(t + h / 2)
        half = sla.expm(h / 2 * frozen)
        full = half @ half

        def remainder(time, V):
            return (generator(time) - frozen) @ V

        k1 = remainder(t, U)
        k2 = remainder(t + h / 2, half @ (U + h / 2 * k1))
        k3 = remainder(t + h / 2, half @ U + h / 2 * k2)
        k4 = remainder(t + h, full @ U + h * (half @ k3))
        U = full @ U + h / 6 * (full @ k1 + 2 * (half @ k2) + 2 * (half @ k3) + k4)
    return U


_GAUSS_OFFSET = np.sqrt(3.0) / 6


def _magnus_integrate(generator: Generator, t0: float, t1: float, U0: np.ndarray, steps: int) -> np.ndarray:
    """Fourth-order Magnus integrator with two Gauss points."""
    h = (t1 - t0) / steps
    U = U0
    for i in range(steps):
        t = t0 + i * h
        A1 = generator(t + (0.5 - _GAUSS_OFFSET) * h)
        A2 = generator(t + (0.5 + _GAUSS_OFFSET) * h)
        omega = h / 2 * (A1 + A2) + np.sqrt(3.0) * h ** 2 / 12 * (A2 @ A1 - A1 @ A2)
        U = sla.expm(omega) @ U
    return U


_INTEGRATORS = {
    'rk4': _rk4_integrate,
    'method_of_lines': _lawson_integrate,
    'magnus': _magnus_integrate,
}


def _spectral_radius_bound(generator: Generator, t0: float, t1: float) -> float:
    samples = np.linspace(t0, t1, 5)
    return max(float(np.max(np.sum(np.abs(generator(t)), axis=1))) for t in samples)


def evolve_linear(generator: Generator, t0: float, t1: float, U0: np.ndarray, tol: float,
                  method: str = 'magnus', initial_steps: Optional[int] = None,
                  max_halvings: int = MAX_HALVINGS) -> Tuple[np.ndarray, int, int, float]:
    """Integrates U' = A(t) U on [t0, t1], halving the step until the change drops below tol/10.

    Returns (U, steps, halvings, last relative change). Raises ConvergenceError
    with the finest estimate after ``max_halvings`` halvings.
    """
    if method not in _INTEGRATORS:
        raise ValueError(f"unknown integrator {method!r}")
    if t1 == t0:
        return np.array(U0, dtype=complex), 0, 0, 0.0
    integrate = _INTEGRATORS[method]
    if initial_steps is None:
        if method == 'rk4':
            radius = _spectral_radius_bound(generator, t0, t1)
            initial_steps = max(1, int(np.ceil((t1 - t0) * radius / RK4_STABILITY)))
        else:
            initial_steps = 2
    steps = int(initial_steps)
    previous = integrate(generator, t0, t1, U0, steps)
    change = np.inf
    for halvings in range(1, max_halvings + 1):
        steps *= 2
        current = integrate(generator, t0, t1, U0, steps)
        scale = max(float(np.linalg.norm(current)), 1e-300)
        change = float(np.linalg.norm(current - previous)) / scale
        previous = current
        if change < tol / 10:
            return current, steps, halvings, change
    raise ConvergenceError(f"{method} did not self-converge on [{t0:g}, {t1:g}] after {max_halvings} halvings",
                           best_estimate=previous, residual=change)


def _operator_matrix(sym: SymbolFunction, t: float, grid: PeriodicGrid) -> np.ndarray:
    return quantize(sample(sym, t, grid)).matrix()


def build_generator(symbols: SymbolFunction, grid: PeriodicGrid) -> Tuple[Generator, Callable[[float], float]]:
    """Returns (A(s), time_to_s) for U' = A U with A = -q^w, in the integration variable s.

    Separable symbols c(t) q_0 integrate in s = int_0^t c, where A = -q_0^w is
    constant. Hoelder families q_a + t^alpha q_b with alpha < 1 integrate in
    s = t^alpha, where the generator (1/alpha) s^{1/alpha - 1} q^w(s^{1/alpha}) is smooth.
    """
    if symbols.time_change is not None:
        (_, base), = symbols.time_profile
        constant = -_operator_matrix(base, 0.0, grid)
        return (lambda s: constant), symbols.time_change

    if symbols.time_profile:
        parts = [(profile, _operator_matrix(part, 0.0, grid)) for profile, part in symbols.time_profile]

        def operator_at(t):
            return sum(profile(t) * mat for profile, mat in parts)
    elif not symbols.time_dependent:
        frozen = _operator_matrix(symbols, 0.0, grid)

        def operator_at(t):
            return frozen
    else:
        cache: Dict[float, np.ndarray] = {}
        lock = threading.Lock()

        def operator_at(t):
            with lock:
                if t not in cache:
                    cache[t] = _operator_matrix(symbols, t, grid)
                return cache[t]

    alpha = symbols.holder.alpha
    if symbols.time_dependent and alpha < 1.0:
        power = 1.0 / alpha

        def generator(tau):
            tau = max(tau, 0.0)
            return -(power * tau ** (power - 1.0)) * operator_at(tau ** power)

        return generator, (lambda t: t ** alpha)

    def generator(t):
        return -operator_at(t)

    return generator, (lambda t: t)


def exact_multiplier_matrix(symbols: SymbolFunction, grid: PeriodicGrid, t0: float, t1: float,
                            tol: float) -> Tuple[np.ndarray, float]:
    """Fourier-multiplier exp(-int_{t0}^{t1} q(tau, xi) dtau) for x-independent q, in FFT order."""
    if not symbols.x_independent:
        raise ValueError(f"symbol {symbols.name!r} depends on x")
    xi = grid.frequency_mesh()
    x = tuple(np.zeros((1,) * grid.dim) for _ in range(grid.dim))

    def integrand(tau):
        return np.asarray(symbols(tau, x, xi), dtype=complex).reshape(-1)

    if symbols.time_dependent:
        integral, error = quad_vec(integrand, t0, t1, epsabs=tol / 10, epsrel=0.0, norm='max')
    else:
        integral, error = (t1 - t0) * integrand(t0), 0.0
    return np.exp(-integral).reshape(grid.shape), float(error)


def _apply_multiplier(grid: PeriodicGrid, multiplier: np.ndarray, data: np.ndarray) -> np.ndarray:
    flat = data.reshape(grid.size, -1)
    cube = flat.T.reshape((-1,) + grid.shape)
    axes = tuple(range(1, grid.dim + 1))
    coeffs = sfft.fftn(cube, axes=axes, workers=get_thread_count()) * multiplier
    out = sfft.ifftn(coeffs, axes=axes, workers=get_thread_count())
    return out.reshape(flat.shape[1], grid.size).T.reshape(data.shape)


def _fine_multiproduct(symbols, grid, times, data) -> Tuple[List[np.ndarray], ReferenceSolution]:
    T = times[-1]
    mp = MultiProduct(symbols, Subdivision.uniform(T, FINE_MULTIPRODUCT_STEPS), grid)
    coarse = MultiProduct(symbols, Subdivision.uniform(T, FINE_MULTIPRODUCT_STEPS // 2), grid)
    outputs = [mp.apply_array(t, data) for t in times]
    final = coarse.apply_array(T, data)
    change = float(np.linalg.norm(outputs[-1] - final) / max(np.linalg.norm(outputs[-1]), 1e-300))
    return outputs, ReferenceSolution('fine_multiproduct', change, FINE_MULTIPRODUCT_STEPS)


def _resolve_solver(symbols: SymbolFunction, solver: str) -> str:
    if solver not in SOLVERS:
        raise ValueError(f"unknown reference solver {solver!r}")
    if solver == 'auto':
        return 'exact_multiplier' if symbols.x_independent else 'magnus'
    return solver


def evolve_at_times(generator: Generator, to_s: Callable[[float], float], times: Sequence[float],
                    data: np.ndarray, tol: float, method: str) -> Tuple[List[np.ndarray], ReferenceSolution]:
    """Evolves data segment by segment through the requested times (given in t, integrated in s)."""
    outputs = []
    current, previous_s = np.asarray(data, dtype=complex), to_s(0.0)
    total_steps, max_halvings, worst = 0, 0, 0.0
    for t in times:
        s = to_s(t)
        current, steps, halvings, change = evolve_linear(generator, previous_s, s, current, tol, method=method)
        outputs.append(current)
        total_steps += steps
        max_halvings = max(max_halvings, halvings)
        worst = max(worst, change)
        previous_s = s
    logger.debug(f"[REF] {method}: {total_steps} steps, change {worst:.3e}")
    return outputs, ReferenceSolution(method, worst, total_steps, max_halvings, True)


def compare_solutions(primary: Sequence[np.ndarray], secondary: Sequence[np.ndarray], tol: float,
                      labels: Tuple[str, str]) -> float:
    """Largest relative disagreement; raises ConvergenceError above 10 tol."""
    disagreement = 0.0
    for a, b in zip(primary, secondary):
        scale = max(float(np.linalg.norm(a)), 1e-300)
        disagreement = max(disagreement, float(np.linalg.norm(a - b)) / scale)
    if disagreement > 10 * tol:
        raise ConvergenceError(f"reference solvers {labels[0]} and {labels[1]} disagree by {disagreement:.3e}",
                               best_estimate=list(primary), residual=disagreement)
    logger.info(f"[REF] {labels[0]} vs {labels[1]}: agreement {disagreement:.3e}")
    return disagreement


def reference_evolution(symbols: SymbolFunction, grid: PeriodicGrid, times: Sequence[float],
                        data: np.ndarray, tol: float, solver: str = 'auto') -> Tuple[List[np.ndarray], ReferenceSolution]:
    """U(t, 0) data at each requested time (ascending, starting after 0)."""
    if tol < MIN_TOLERANCE:
        raise ValueError(f"reference tolerance must be >= {MIN_TOLERANCE}, got {tol}")
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("reference times must be nonnegative and ascending")
    solver = _resolve_solver(symbols, solver)
    data = np.asarray(data, dtype=complex)
    if solver == 'fine_multiproduct':
        return _fine_multiproduct(symbols, grid, times, data)

    outputs = []
    if solver == 'exact_multiplier':
        worst = 0.0
        for t in times:
            multiplier, error = exact_multiplier_matrix(symbols, grid, 0.0, t, tol)
            worst = max(worst, error)
            outputs.append(_apply_multiplier(grid, multiplier, data))
        return outputs, ReferenceSolution('exact_multiplier', worst, 0, 0, True)

    generator, to_s = build_generator(symbols, grid)
    return evolve_at_times(generator, to_s, times, data, tol, solver)


def reference_solve(symbols: SymbolFunction, T: float, u0: GridField, tol: float,
                    solver: str = 'auto') -> Tuple[GridField, ReferenceSolution]:
    """Approximates U(T, 0) u0 to the requested tolerance."""
    outputs, info = reference_evolution(symbols, u0.grid, [T], u0.flat(), tol, solver)
    return GridField(u0.grid, outputs[-1].reshape(u0.grid.shape)), info


def certify_reference(symbols: SymbolFunction, grid: PeriodicGrid, times: Sequence[float],
                      data: np.ndarray, tol: float,
                      solvers: Tuple[str, str] = None) -> Tuple[List[np.ndarray], ReferenceSolution]:
    """Runs two independent solvers and accepts the first when they agree to 10 tol."""
    if solvers is None:
        solvers = ('exact_multiplier', 'magnus') if symbols.x_independent else ('magnus', 'method_of_lines')
    primary, info = reference_evolution(symbols, grid, times, data, tol, solvers[0])
    secondary, _ = reference_evolution(symbols, grid, times, data, tol, solvers[1])
    disagreement = compare_solutions(primary, secondary, tol, solvers)
    return primary, info._replace(solver=f"{solvers[0]}+{solvers[1]}", tolerance=max(info.tolerance, disagreement),
                                  certified=True)
