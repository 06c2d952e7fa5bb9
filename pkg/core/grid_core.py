# core/grid_core.py

"""Periodic grids, unitary Fourier transforms and Sobolev weights.

Every other module computes on these grids. A grid has N points per axis on a
box of period L; the midpoint grid used by Weyl symbols has 2N points per axis
and the refined frequency lattice has spacing pi/L.
"""
import logging
from typing import Callable, NamedTuple, Tuple

import numpy as np
import scipy.fft as sfft

from core.errors import GridMismatchError
from utils.platform_utils import get_thread_count

logger = logging.getLogger(__name__)


class PeriodicGrid(NamedTuple):
    """Uniform periodic grid: `dim` axes, N points per axis, period L."""
    dim: int
    points_per_dim: int
    box_length: float

    @classmethod
    def create(cls, dim: int = 1, points_per_dim: int = 64,
               box_length: float = 2 * np.pi) -> 'PeriodicGrid':
        if int(dim) < 1:
            raise ValueError(f"grid dimension must be positive, got {dim}")
        n_pts = int(points_per_dim)
        if n_pts < 8 or n_pts % 2:
            raise ValueError(f"points per axis must be even and >= 8, got {points_per_dim}")
        if not box_length > 0:
            raise ValueError(f"box length must be positive, got {box_length}")
        return cls(int(dim), n_pts, float(box_length))

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim ** self.dim

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    def axis_points(self) -> np.ndarray:
        return np.arange(self.points_per_dim) * self.spacing

    def midpoint_axis(self) -> np.ndarray:
        return np.arange(2 * self.points_per_dim) * (self.spacing / 2)

    def frequency_axis(self) -> np.ndarray:
        """Integer lattice 2*pi*k/L, k = -N/2 .. N/2-1, ascending."""
        half = self.points_per_dim // 2
        return 2 * np.pi * np.arange(-half, half) / self.box_length

    def refined_frequency_axis(self) -> np.ndarray:
        """Half-step lattice k'*pi/L, k' = -N .. N-1, ascending."""
        n_pts = self.points_per_dim
        return np.pi * np.arange(-n_pts, n_pts) / self.box_length

    def fft_frequencies(self) -> np.ndarray:
        return 2 * np.pi * sfft.fftfreq(self.points_per_dim, d=self.spacing)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        axis = self.axis_points()
        return tuple(np.meshgrid(*([axis] * self.dim), indexing='ij'))

    def frequency_mesh(self) -> Tuple[np.ndarray, ...]:
        """Frequencies in FFT order, broadcast to the grid shape."""
        freqs = self.fft_frequencies()
        return tuple(np.meshgrid(*([freqs] * self.dim), indexing='ij'))

    def japanese_bracket(self) -> np.ndarray:
        """<xi> = (1 + |xi|^2)^(1/2) in FFT order."""
        total = sum(xi ** 2 for xi in self.frequency_mesh())
        return np.sqrt(1.0 + total)


class GridField(NamedTuple):
    """Complex samples on a grid, either in space or (unitary) frequency form."""
    grid: PeriodicGrid
    values: np.ndarray
    spectral: bool = False

    @classmethod
    def from_values(cls, grid: PeriodicGrid, values, spectral: bool = False) -> 'GridField':
        arr = np.asarray(values, dtype=complex)
        if arr.size != grid.size:
            raise GridMismatchError(f"expected {grid.size} values for grid {grid.shape}, got {arr.size}")
        return cls(grid, arr.reshape(grid.shape), spectral)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, func: Callable[..., np.ndarray]) -> 'GridField':
        values = np.broadcast_to(func(*grid.mesh()), grid.shape)
        return cls.from_values(grid, values)

    @classmethod
    def random(cls, grid: PeriodicGrid, rng: np.random.Generator) -> 'GridField':
        values = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        return cls(grid, values, False)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def check_same_grid(*items):
    """Raises GridMismatchError unless every item carries the same grid."""
    grids = [getattr(item, 'grid', item) for item in items]
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            raise GridMismatchError(f"grid mismatch: {first} vs {other}")


def fourier_forward(f: GridField) -> GridField:
    """Unitary forward transform; frequencies in FFT order."""
    if f.spectral:
        raise GridMismatchError("field is already on the frequency side")
    if f.values.shape != f.grid.shape:
        raise GridMismatchError(f"field shape {f.values.shape} does not match grid {f.grid.shape}")
    coeffs = sfft.fftn(f.values, norm='ortho', workers=get_thread_count())
    return GridField(f.grid, coeffs, True)


def fourier_inverse(f: GridField) -> GridField:
    if not f.spectral:
        raise GridMismatchError("field is not on the frequency side")
    if f.values.shape != f.grid.shape:
        raise GridMismatchError(f"field shape {f.values.shape} does not match grid {f.grid.shape}")
    values = sfft.ifftn(f.values, norm='ortho', workers=get_thread_count())
    return GridField(f.grid, values, False)


def apply_sobolev_weight(f: GridField, s: float) -> GridField:
    """Multiplies the Fourier coefficients by <xi>^s; returns a field on the input's side."""
    if s == 0:
        return f
    weight = f.grid.japanese_bracket() ** s
    if f.spectral:
        return GridField(f.grid, f.values * weight, True)
    return fourier_inverse(GridField(f.grid, fourier_forward(f).values * weight, True))


def sobolev_norm(f: GridField, s: float) -> float:
    """H^s norm with quadrature weight (L/N)^n; equals the L2 norm of the weighted field."""
    coeffs = f.values if f.spectral else fourier_forward(f).values
    weight = f.grid.japanese_bracket() ** (2 * s)
    return float(np.sqrt(f.grid.cell_volume * np.sum(weight * np.abs(coeffs) ** 2)))


def l2_norm(f: GridField) -> float:
    values = fourier_inverse(f).values if f.spectral else f.values
    return float(np.sqrt(f.grid.cell_volume * np.sum(np.abs(values) ** 2)))


def weighted_l2_norm(f: GridField, m: GridField) -> float:
    """sqrt(sum |f|^2 m (L/N)^n) for a positive weight m."""
    check_same_grid(f, m)
    weight = np.asarray(m.values)
    if np.any(np.abs(weight.imag) > 0) or np.any(weight.real <= 0):
        raise ValueError("weight must be real and strictly positive")
    values = fourier_inverse(f).values if f.spectral else f.values
    return float(np.sqrt(f.grid.cell_volume * np.sum(np.abs(values) ** 2 * weight.real)))


def inner_product(f: GridField, g: GridField) -> complex:
    """<f, g> = (L/N)^n sum f conj(g) on spatial samples."""
    check_same_grid(f, g)
    return complex(f.grid.cell_volume * np.vdot(g.flat(), f.flat()))


def sobolev_multiplier_array(grid: PeriodicGrid, s: float, data: np.ndarray) -> np.ndarray:
    """Applies <D>^s to the columns of a (size, k) or (size,) array of spatial samples."""
    if s == 0:
        return data
    flat = data.reshape(grid.size, -1)
    cube = flat.T.reshape((-1,) + grid.shape)
    axes = tuple(range(1, grid.dim + 1))
    coeffs = sfft.fftn(cube, axes=axes, workers=get_thread_count())
    coeffs *= grid.japanese_bracket() ** s
    out = sfft.ifftn(coeffs, axes=axes, workers=get_thread_count())
    return out.reshape(flat.shape[1], grid.size).T.reshape(data.shape)


def spectral_derivative(values: np.ndarray, length: float, order: int = 1, axis: int = -1) -> np.ndarray:
    """Derivative of periodic samples along one axis; the Nyquist mode is dropped for odd orders."""
    if order == 0:
        return values
    count = values.shape[axis]
    wavenumbers = 2 * np.pi * sfft.fftfreq(count, d=length / count)
    factor = (1j * wavenumbers) ** order
    if order % 2 and count % 2 == 0:
        factor[count // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = count
    coeffs = sfft.fft(values, axis=axis)
    result = sfft.ifft(coeffs * factor.reshape(shape), axis=axis)
    if np.isrealobj(values):
        return result.real
    return result


def trig_interpolation_matrix(count: int, length: float, points) -> np.ndarray:
    """Matrix mapping `count` periodic samples (spacing length/count) to values at `points`.

    Uses the symmetric trigonometric interpolant (Nyquist mode split evenly), which
    reproduces the samples exactly at the nodes.
    """
    pts = np.asarray(points, dtype=float).reshape(-1)
    nodes = np.arange(count) * (length / count)
    half = count // 2
    ks = np.arange(-half + 1, half) if count % 2 == 0 else np.arange(-half, half + 1)
    phase = 2 * np.pi / length
    at_points = np.exp(1j * phase * np.outer(pts, ks))
    at_nodes = np.exp(-1j * phase * np.outer(nodes, ks))
    basis = (at_points @ at_nodes.T).real
    if count % 2 == 0:
        basis = basis + np.cos(phase * half * (pts[:, None] - nodes[None, :]))
    return basis / count


def trig_interpolate(values: np.ndarray, length: float, points) -> np.ndarray:
    """Evaluates the trigonometric interpolant of 1-D periodic samples at arbitrary points."""
    pts = np.asarray(points, dtype=float)
    matrix = trig_interpolation_matrix(len(values), length, pts)
    return (matrix @ values).reshape(pts.shape)
