# core/weyl.py

"""Weyl quantization on periodic grids.

The discrete Weyl operator of a sampled symbol a is

    (a^w u)(x_j) = N^{-n} sum_d sum_k' e^{-i d.Delta.eta_k'} a~((2j + d) mod 2N, eta_k') u(x_{j+d})

with d the wrapped offset in [-N/2, N/2), Delta = L/N, eta_k' = k' pi / L on the
refined lattice and a~ the parity projection

    a~(m, k') = 2^{-n} sum_{s in {0,1}^n} (-1)^{k'.s} a(m + sN, k').

Even k' carry the part of the symbol that is L/2-periodic in x, odd k' the
anti-periodic part; this makes the kernel single-valued on the torus and exact
for trigonometric data. Two application paths share the definition: a dense
kernel evaluated by explicit exponential sums (the oracle) and a per-offset
diagonal table built from FFTs over the lattice (the fast path).
"""
import itertools
import logging
import math
import threading
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from core.errors import ConvergenceError, GridMismatchError
from core.grid_core import GridField, PeriodicGrid, sobolev_multiplier_array, spectral_derivative
from core.symbols import SampledSymbol, xi_difference, derivative, poisson_bracket
from utils.platform_utils import get_thread_count

logger = logging.getLogger(__name__)

QUANTIZATIONS = ('weyl', 'left')
PATHS = ('fft', 'dense')


def _wrap(offsets: np.ndarray, count: int) -> np.ndarray:
    return (offsets + count // 2) % count - count // 2


def _grid_indices(count: int, dim: int) -> np.ndarray:
    """All multi-indices of an n-dimensional count^n box, C order, shape (count^n, n)."""
    return np.array(list(itertools.product(range(count), repeat=dim)), dtype=int).reshape(-1, dim)


def parity_projection(values: np.ndarray, dim: int, count: int) -> np.ndarray:
    """Projects samples on (2N)^n x (2N)^n onto the torus-consistent Weyl data."""
    projected = values
    for axis in range(dim):
        sign_shape = [1] * (2 * dim)
        sign_shape[dim + axis] = 2 * count
        signs = ((-1.0) ** np.arange(2 * count)).reshape(sign_shape)
        projected = 0.5 * (projected + signs * np.roll(projected, count, axis=axis))
    return projected


class SobolevStep:
    """<D>^s as a chain element."""

    def __init__(self, grid: PeriodicGrid, s: float):
        self.grid = grid
        self.s = float(s)

    def apply_array(self, data: np.ndarray) -> np.ndarray:
        return sobolev_multiplier_array(self.grid, self.s, data)

    adjoint_array = apply_array


class MultiplicationStep:
    """Pointwise multiplication by grid values."""

    def __init__(self, grid: PeriodicGrid, weights):
        weights = np.asarray(weights, dtype=complex).reshape(-1)
        if weights.size != grid.size:
            raise GridMismatchError(f"multiplier has {weights.size} values, grid has {grid.size}")
        self.grid = grid
        self.weights = weights

    def apply_array(self, data: np.ndarray) -> np.ndarray:
        return self.weights.reshape((-1,) + (1,) * (data.ndim - 1)) * data

    def adjoint_array(self, data: np.ndarray) -> np.ndarray:
        return np.conj(self.weights).reshape((-1,) + (1,) * (data.ndim - 1)) * data


class MatrixStep:
    """A dense matrix acting on flattened grid samples."""

    def __init__(self, grid: PeriodicGrid, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (grid.size, grid.size):
            raise GridMismatchError(f"matrix shape {matrix.shape} does not fit grid size {grid.size}")
        self.grid = grid
        self.matrix = matrix

    def apply_array(self, data: np.ndarray) -> np.ndarray:
        return self.matrix @ data

    def adjoint_array(self, data: np.ndarray) -> np.ndarray:
        return self.matrix.conj().T @ data


class QuantizedOperator:
    """a^w(x, D) (or the left quantization a(x, D)) of a sampled symbol."""

    def __init__(self, symbol: SampledSymbol, path: str = 'fft', quantization: str = 'weyl'):
        if path not in PATHS:
            raise ValueError(f"unknown application path {path!r}")
        if quantization not in QUANTIZATIONS:
            raise ValueError(f"unknown quantization {quantization!r}")
        self.symbol = symbol
        self.grid = symbol.grid
        self.path = path
        self.quantization = quantization
        self._lock = threading.Lock()
        self._dense_kernel: Optional[np.ndarray] = None
        self._matrix: Optional[np.ndarray] = None
        n, count = self.grid.dim, self.grid.points_per_dim
        self._points = _grid_indices(count, n)
        self._offsets = _wrap(self._points, count)
        shifted = (self._points[:, None, :] + self._offsets[None, :, :]) % count
        self._gather = np.ravel_multi_index(tuple(np.moveaxis(shifted, -1, 0)), (count,) * n)
        self._table = self._build_table()

    def __repr__(self):
        return f"QuantizedOperator({self.symbol.name!r}, path={self.path}, {self.quantization})"

    def _midpoints(self) -> np.ndarray:
        count, n = self.grid.points_per_dim, self.grid.dim
        mid = (2 * self._points[:, None, :] + self._offsets[None, :, :]) % (2 * count)
        return np.ravel_multi_index(tuple(np.moveaxis(mid, -1, 0)), (2 * count,) * n)

    def _build_table(self) -> np.ndarray:
        n, count = self.grid.dim, self.grid.points_per_dim
        xi_axes = tuple(range(n, 2 * n))
        scale = float(count) ** (-n)
        workers = get_thread_count()
        if self.quantization == 'left':
            primal = self.symbol.primal_slice()
            spectrum = sfft.fftn(sfft.ifftshift(primal, axes=xi_axes), axes=xi_axes, workers=workers)
            return scale * spectrum.reshape(count ** n, count ** n)
        projected = parity_projection(self.symbol.values, n, count)
        offsets_by_index = _wrap(_grid_indices(count, n), count)
        table = np.zeros(((2 * count) ** n, count ** n), dtype=complex)
        for parity in itertools.product((0, 1), repeat=n):
            index = (slice(None),) * n + tuple(slice(p, None, 2) for p in parity)
            block = sfft.ifftshift(projected[index], axes=xi_axes)
            spectrum = sfft.fftn(block, axes=xi_axes, workers=workers).reshape((2 * count) ** n, count ** n)
            phase = np.exp(-1j * np.pi * (offsets_by_index @ np.array(parity)) / count)
            table += spectrum * phase[None, :]
        table *= scale
        offset_index = np.ravel_multi_index(tuple((self._offsets % count).T), (count,) * n)
        return table[self._midpoints(), offset_index[None, :]]

    def dense_kernel(self) -> np.ndarray:
        """Kernel matrix from explicit exponential sums over the lattice."""
        with self._lock:
            if self._dense_kernel is None:
                self._dense_kernel = self._explicit_kernel()
            return self._dense_kernel

    def _explicit_kernel(self) -> np.ndarray:
        grid = self.grid
        n, count = grid.dim, grid.points_per_dim
        size = grid.size
        kernel = np.zeros((size, size), dtype=complex)
        spacing = grid.spacing
        if self.quantization == 'left':
            freqs = _grid_indices(count, n) - count // 2
            xi = 2 * np.pi * freqs / grid.box_length
            primal = self.symbol.primal_slice().reshape(size, count ** n)
            phase = np.exp(-1j * spacing * (self._offsets @ xi.T))
            for row in range(size):
                kernel[row, self._gather[row]] = phase @ primal[row] / size
            return kernel
        projected = parity_projection(self.symbol.values, n, count).reshape((2 * count) ** n, -1)
        eta = np.pi * (_grid_indices(2 * count, n) - count) / grid.box_length
        phase = np.exp(-1j * spacing * (self._offsets @ eta.T))
        mids = self._midpoints()
        for row in range(size):
            kernel[row, self._gather[row]] = np.einsum('rf,rf->r', projected[mids[row]], phase) / size
        return kernel

    def matrix(self) -> np.ndarray:
        """The operator as a dense matrix on flattened samples (built from the selected path)."""
        if self.path == 'dense':
            return self.dense_kernel()
        with self._lock:
            if self._matrix is None:
                size = self.grid.size
                mat = np.zeros((size, size), dtype=complex)
                rows = np.repeat(np.arange(size), size).reshape(size, size)
                mat[rows, self._gather] = self._table
                self._matrix = mat
            return self._matrix

    def apply_array(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=complex)
        if self.path == 'fft' and data.ndim == 1:
            return np.sum(self._table * data[self._gather], axis=1)
        return self.matrix() @ data

    def adjoint_array(self, data: np.ndarray) -> np.ndarray:
        return self.matrix().conj().T @ np.asarray(data, dtype=complex)

    def apply(self, u: GridField) -> GridField:
        if u.grid != self.grid:
            raise GridMismatchError(f"field grid {u.grid} does not match operator grid {self.grid}")
        return GridField(self.grid, self.apply_array(u.flat()).reshape(self.grid.shape))

    def adjoint_apply(self, u: GridField) -> GridField:
        if u.grid != self.grid:
            raise GridMismatchError(f"field grid {u.grid} does not match operator grid {self.grid}")
        return GridField(self.grid, self.adjoint_array(u.flat()).reshape(self.grid.shape))


def quantize(symbol: SampledSymbol, path: str = 'fft', quantization: str = 'weyl') -> QuantizedOperator:
    return QuantizedOperator(symbol, path=path, quantization=quantization)


def left_quantize(symbol: SampledSymbol, path: str = 'fft') -> QuantizedOperator:
    return QuantizedOperator(symbol, path=path, quantization='left')


def apply(op: QuantizedOperator, u: GridField) -> GridField:
    return op.apply(u)


def adjoint_apply(op: QuantizedOperator, u: GridField) -> GridField:
    return op.adjoint_apply(u)


def moyal_compose(a: SampledSymbol, b: SampledSymbol, terms: int = 1) -> SampledSymbol:
    """Truncated Weyl composition sum_{j<=terms} (1/j!) (1/2i)^j (d_xi d_y - d_x d_eta)^j a b."""
    if terms < 0 or terms > 3:
        raise ValueError(f"terms must lie in 0..3, got {terms}")
    if a.grid != b.grid:
        raise GridMismatchError(f"symbol grids differ: {a.grid} vs {b.grid}")
    n = a.dim
    result = a.values * b.values
    if terms >= 1:
        result = result + poisson_bracket(a, b).values / 2j
    cache = {}

    def cached(which, symbol, alpha, beta):
        key = (which, alpha, beta)
        if key not in cache:
            cache[key] = derivative(symbol, alpha, beta)
        return cache[key]

    for order in range(2, terms + 1):
        grouped = {}
        for sequence in itertools.product(range(n), ('xi_y', 'x_eta'), repeat=order):
            pairs = list(zip(sequence[0::2], sequence[1::2]))
            alpha_a, beta_a, alpha_b, beta_b = ([0] * n for _ in range(4))
            sign = 1
            for axis, kind in pairs:
                if kind == 'xi_y':
                    beta_a[axis] += 1
                    alpha_b[axis] += 1
                else:
                    alpha_a[axis] += 1
                    beta_b[axis] += 1
                    sign = -sign
            key = (tuple(alpha_a), tuple(beta_a), tuple(alpha_b), tuple(beta_b))
            grouped[key] = grouped.get(key, 0) + sign
        total = np.zeros_like(result)
        for (alpha_a, beta_a, alpha_b, beta_b), weight in grouped.items():
            if weight:
                total = total + weight * cached('a', a, alpha_a, beta_a) * cached('b', b, alpha_b, beta_b)
        result = result + total * (1 / 2j) ** order / math.factorial(order)
    time = a.time if a.time is not None else b.time
    return SampledSymbol(a.grid, result, time, name=f"{a.name}#{b.name}")


class SampledAmplitude(NamedTuple):
    """a(x, y, xi) on (midpoint x) x (midpoint y) x (refined lattice); n = 1 only."""
    grid: PeriodicGrid
    values: np.ndarray


def sample_amplitude(func, grid: PeriodicGrid) -> SampledAmplitude:
    """Evaluates func(x, y, xi) with broadcast arrays."""
    if grid.dim != 1:
        raise ValueError("amplitudes are supported for n = 1 only")
    mid = grid.midpoint_axis()
    x = mid[:, None, None]
    y = mid[None, :, None]
    xi = grid.refined_frequency_axis()[None, None, :]
    size = 2 * grid.points_per_dim
    values = np.broadcast_to(np.asarray(func(x, y, xi), dtype=complex), (size, size, size)).copy()
    return SampledAmplitude(grid, values)


def amplitude_operator_matrix(amp: SampledAmplitude) -> np.ndarray:
    """(Au)(x_j) = N^{-1} sum_l sum_k e^{i(x_j - y_l) xi_k} a(x_j, y_l, xi_k) u(y_l)."""
    count = amp.grid.points_per_dim
    primal = amp.values[::2, ::2, ::2]
    k = np.arange(-count // 2, count // 2)
    j = np.arange(count)
    phase = np.exp(2j * np.pi * (j[:, None, None] - j[None, :, None]) * k[None, None, :] / count)
    return np.sum(phase * primal, axis=2) / count


def amplitude_to_weyl(amp: SampledAmplitude, terms: int = 1) -> SampledSymbol:
    """Weyl symbol b of the amplitude operator: sum_j (1/j!) ((i/2)(d_x - d_y) d_xi)^j a |_{y=x}."""
    if amp.grid.dim != 1:
        raise ValueError("amplitude conversion is supported for n = 1 only")
    if terms < 0 or terms > 2:
        raise ValueError(f"terms must lie in 0..2, got {terms}")
    length = amp.grid.box_length
    diagonal = np.arange(2 * amp.grid.points_per_dim)

    def antidiagonal_derivative(values):
        return (spectral_derivative(values, length, 1, axis=0)
                - spectral_derivative(values, length, 1, axis=1))

    result = amp.values[diagonal, diagonal, :].copy()
    current = amp.values
    for order in range(1, terms + 1):
        current = antidiagonal_derivative(xi_difference(current, 2, np.pi / length))
        result = result + (0.5j) ** order / math.factorial(order) * current[diagonal, diagonal, :]
    return SampledSymbol(amp.grid, result, name='weyl(amplitude)')


class OperatorNormEstimate(NamedTuple):
    """Largest singular value of weight(s_out) o chain o weight(-s_in)."""
    value: float
    s_in: float
    s_out: float
    iterations: int
    residual: float
    converged: bool = True
    method: str = 'power'


def _chain_forward(chain, grid, s_in, s_out, data):
    data = sobolev_multiplier_array(grid, -s_in, data)
    for step in chain:
        data = step.apply_array(data)
    return sobolev_multiplier_array(grid, s_out, data)


def _chain_adjoint(chain, grid, s_in, s_out, data):
    data = sobolev_multiplier_array(grid, s_out, data)
    for step in reversed(chain):
        data = step.adjoint_array(data)
    return sobolev_multiplier_array(grid, -s_in, data)


def chain_matrix(op_chain: Sequence, grid: Optional[PeriodicGrid] = None,
                 s_in: float = 0.0, s_out: float = 0.0) -> np.ndarray:
    """Dense matrix of weight(s_out) o chain o weight(-s_in); the chain's first element acts first."""
    chain = list(op_chain)
    if not chain:
        raise ValueError("operator chain is empty")
    grid = grid or chain[0].grid
    return _chain_forward(chain, grid, s_in, s_out, np.eye(grid.size, dtype=complex))


def operator_norm(op_chain: Sequence, s_in: float = 0.0, s_out: float = 0.0,
                  grid: Optional[PeriodicGrid] = None, seed: int = 0, tol: float = 1e-8,
                  max_iter: int = 500, method: str = 'power', strict: bool = False) -> OperatorNormEstimate:
    """Norm of the chain from H^{s_in} to H^{s_out}.

    ``method='power'`` runs power iteration on T*T with a seeded start vector
    and reports whether the residual reached ``tol`` within ``max_iter``;
    ``'svd'`` takes singular values of the dense matrix and serves as a
    cross-check on small grids.
    """
    chain = list(op_chain)
    if not chain:
        raise ValueError("operator chain is empty")
    grid = grid or chain[0].grid
    if method == 'svd':
        matrix = chain_matrix(chain, grid, s_in, s_out)
        value = float(sla.svdvals(matrix)[0])
        return OperatorNormEstimate(value, float(s_in), float(s_out), 0, 0.0, True, 'svd')
    if method != 'power':
        raise ValueError(f"unknown norm method {method!r}")

    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(grid.size) + 1j * rng.standard_normal(grid.size)
    vec /= np.linalg.norm(vec)
    eigenvalue, residual, converged, iterations = 0.0, np.inf, False, 0
    for iterations in range(1, max_iter + 1):
        image = _chain_adjoint(chain, grid, s_in, s_out, _chain_forward(chain, grid, s_in, s_out, vec))
        eigenvalue = float(np.vdot(vec, image).real)
        image_norm = float(np.linalg.norm(image))
        if image_norm == 0.0 or eigenvalue <= 0.0:
            eigenvalue, residual, converged = max(eigenvalue, 0.0), 0.0, True
            break
        residual = float(np.linalg.norm(image - eigenvalue * vec) / eigenvalue)
        vec = image / image_norm
        if residual < tol:
            converged = True
            break
    value = float(np.sqrt(max(eigenvalue, 0.0)))
    if not converged:
        logger.warning(f"[NORM] power iteration stopped after {iterations} iterations "
                       f"(residual {residual:.3e}, estimate {value:.12g})")
        if strict:
            raise ConvergenceError("power iteration did not converge", best_estimate=value, residual=residual)
    return OperatorNormEstimate(value, float(s_in), float(s_out), iterations, residual, converged, 'power')


class NormCrossCheck(NamedTuple):
    """Power-iteration estimate next to the dense SVD value."""
    power: OperatorNormEstimate
    svd: float
    relative_gap: float


def cross_check_norm(op_chain: Sequence, s_in: float = 0.0, s_out: float = 0.0,
                     grid: Optional[PeriodicGrid] = None, seed: int = 0, tol: float = 1e-8,
                     max_iter: int = 500) -> NormCrossCheck:
    power = operator_norm(op_chain, s_in, s_out, grid, seed=seed, tol=tol, max_iter=max_iter, method='power')
    svd = operator_norm(op_chain, s_in, s_out, grid, method='svd').value
    gap = abs(power.value - svd) / max(svd, 1e-300)
    logger.info(f"[NORM] power {power.value:.12g} vs svd {svd:.12g} (gap {gap:.2e})")
    return NormCrossCheck(power, svd, gap)
