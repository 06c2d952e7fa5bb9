# core/manifold.py

"""Parabolic evolution on the circle with a chart atlas.

The operator A(t) is the Laplace-Beltrami operator of a time-dependent metric
g(t, x) on S^1 = [0, 2 pi). With a squared partition of unity sum phi_i^2 = 1
the operator Q = Q2 + Q1 + Q0 (Q2 = A, Q_{k-1} = -sum [phi_i, Q_k] phi_i)
satisfies A = sum phi_i Q phi_i. A step is

    P_(t', t) = sum_i phi_i psi_i^* p_i^w (psi_i^{-1})^* phi_i,   p_i = e^{-(t'-t) q_i(t)}

with q_i the Weyl symbol of Q in chart i, computed exactly from the
differential coefficients. Chart-local grids are periodic boxes twice as long
as the mapped arc; outside the arc the chart coefficients blend into the
constant heat operator so the symbol stays smooth on the box.
"""
import logging
import math
import threading
from fractions import Fraction
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import newton

from core.change_of_variables import differential_weyl_symbol, transport_coefficients
from core.data_structures import RateFit, ResultRow
from core.errors import IdentityCheckError, SupportMarginError
from core.grid_core import GridField, PeriodicGrid, spectral_derivative, trig_interpolation_matrix
from core.propagator import Subdivision, compare_solutions, evolve_at_times
from core.rate_fit import centered_band, fit_rate
from core.sweep_runner import ProgressCallback, run_points
from core.sweeps import NORM_MAX_ITER, probe_basis
from core.symbols import DyadicProfile, SymbolFunction, exp_symbol, sample
from core.weyl import MatrixStep, MultiplicationStep, QuantizedOperator, operator_norm, quantize

logger = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
OVERLAP_FACTOR = 1.5
IDENTITY_TOL = 1e-8
PROBE_MAX_DEGREE = 8
MIN_MARGIN_CELLS = 2
HEAT_COEFFICIENTS = (0.0, 0.0, -1.0)

Jet = Tuple[np.ndarray, ...]


def _wrap_angle(values):
    return (np.asarray(values, dtype=float) + np.pi) % TWO_PI - np.pi


def smooth_step_jet(s) -> Jet:
    """sigma(s) = f(s) / (f(s) + f(1 - s)), f(s) = e^{-1/s}; returns (sigma, sigma', sigma'')."""
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    sigma = np.where(s >= 1, 1.0, 0.0)
    d1 = np.zeros_like(s)
    d2 = np.zeros_like(s)
    if np.any(inside):
        u = s[inside]
        v = 1.0 - u
        F, G = np.exp(-1.0 / u), np.exp(-1.0 / v)
        F1, G1 = F / u ** 2, -G / v ** 2
        F2, G2 = F * (1 - 2 * u) / u ** 4, G * (1 - 2 * v) / v ** 4
        S, S1, S2 = F + G, F1 + G1, F2 + G2
        numerator1 = F1 * S - F * S1
        sigma[inside] = F / S
        d1[inside] = numerator1 / S ** 2
        d2[inside] = (F2 * S - F * S2) / S ** 2 - 2 * S1 * numerator1 / S ** 3
    return sigma, d1, d2


def jet_product(f: Jet, g: Jet) -> Jet:
    """Leibniz rule up to the shorter jet's order."""
    order = min(len(f), len(g))
    return tuple(sum(math.comb(k, j) * f[j] * g[k - j] for j in range(k + 1)) for k in range(order))


class MetricField:
    """Positive metric coefficient g(t, x) on S^1 with its x-derivative."""

    def __init__(self, value: Callable, derivative: Callable, alpha: float = 1.0,
                 time_dependent: bool = True, rate: Optional[DyadicProfile] = None, name: str = 'metric'):
        self.value = value
        self.derivative = derivative
        self.alpha = float(alpha)
        self.time_dependent = bool(time_dependent)
        self.rate = rate
        self.name = name

    def __repr__(self):
        return f"MetricField({self.name!r}, alpha={self.alpha})"

    @classmethod
    def constant(cls, level: float = 1.0) -> 'MetricField':
        if level <= 0:
            raise ValueError(f"metric must be positive, got {level}")
        return cls(lambda t, x: np.full(np.shape(x), float(level)),
                   lambda t, x: np.zeros(np.shape(x)), time_dependent=False,
                   name='flat' if level == 1.0 else f"constant({level:g})")

    @classmethod
    def flat(cls) -> 'MetricField':
        return cls.constant(1.0)

    @classmethod
    def curved(cls, amplitude: float = 0.3, increment: float = 0.3, alpha: float = 1.0) -> 'MetricField':
        """g = 1 + amplitude sin x + t^alpha increment cos x."""
        def profile(t):
            return float(max(t, 0.0)) ** alpha if increment else 0.0

        return cls(lambda t, x: 1.0 + amplitude * np.sin(x) + profile(t) * increment * np.cos(x),
                   lambda t, x: amplitude * np.cos(x) - profile(t) * increment * np.sin(x),
                   alpha=alpha if increment else 1.0, time_dependent=bool(increment),
                   name=f"curved({amplitude:g},{increment:g},alpha={alpha:g})")

    @classmethod
    def rough(cls, amplitude: float = 0.3, alpha: float = 0.5, epsilon: float = 0.25) -> 'MetricField':
        """g = (1 + amplitude sin x) / c(t) with c a dyadic Weierstrass profile.

        A(t) is then c(t) A_1 for the time-independent operator A_1 of the
        numerator metric, so the exact evolution is exp(-C(t) A_1), C = int_0^t c.
        """
        if not 0 <= amplitude < 1:
            raise ValueError(f"amplitude must lie in [0, 1), got {amplitude}")
        rate = DyadicProfile(alpha, epsilon)
        return cls(lambda t, x: (1.0 + amplitude * np.sin(x)) / rate(t),
                   lambda t, x: amplitude * np.cos(x) / rate(t),
                   alpha=alpha, rate=rate, name=f"rough({amplitude:g},{epsilon:g},alpha={alpha:g})")

    def jet(self, t: float, x) -> Jet:
        x = np.asarray(x, dtype=float)
        return np.asarray(self.value(t, x), dtype=float), np.asarray(self.derivative(t, x), dtype=float)

    def check_positive(self, t: float, x):
        g = np.asarray(self.value(t, np.asarray(x, dtype=float)))
        if np.any(g <= 0):
            raise ValueError(f"metric {self.name} is not positive at t={t}")

    def density(self, x) -> np.ndarray:
        """g_0^{1/2}, the density of the reference measure."""
        return np.sqrt(np.asarray(self.value(0.0, np.asarray(x, dtype=float)), dtype=float))


class DifferentialOperator(NamedTuple):
    """sum_k c_k(x) d_x^k with coefficients sampled on a fixed point set."""
    coefficients: Tuple[np.ndarray, ...]

    @property
    def order(self) -> int:
        return len(self.coefficients) - 1

    def padded(self, order: int) -> 'DifferentialOperator':
        zero = np.zeros_like(self.coefficients[0])
        return DifferentialOperator(tuple(self.coefficients) + (zero,) * (order - self.order))

    def __add__(self, other: 'DifferentialOperator') -> 'DifferentialOperator':
        order = max(self.order, other.order)
        a, b = self.padded(order), other.padded(order)
        return DifferentialOperator(tuple(x + y for x, y in zip(a.coefficients, b.coefficients)))

    def __neg__(self) -> 'DifferentialOperator':
        return DifferentialOperator(tuple(-c for c in self.coefficients))

    def __sub__(self, other: 'DifferentialOperator') -> 'DifferentialOperator':
        return self + (-other)

    def apply_jet(self, jet: Jet) -> np.ndarray:
        return sum(c * jet[k] for k, c in enumerate(self.coefficients))

    def left_multiply(self, f: Jet) -> 'DifferentialOperator':
        return DifferentialOperator(tuple(f[0] * c for c in self.coefficients))

    def right_multiply(self, f: Jet) -> 'DifferentialOperator':
        """(sum_m c_m d^m) o f = sum_j (sum_{m >= j} C(m, j) c_m f^{(m-j)}) d^j."""
        order = self.order
        result = []
        for j in range(order + 1):
            result.append(sum(math.comb(m, j) * self.coefficients[m] * f[m - j] for m in range(j, order + 1)))
        return DifferentialOperator(tuple(result))

    def commutator(self, f: Jet) -> 'DifferentialOperator':
        """[f, self] = f o self - self o f."""
        return self.left_multiply(f) - self.right_multiply(f)


def build_laplace_beltrami(metric: MetricField, t: float, points) -> DifferentialOperator:
    """A2 u = -g^{-1/2} (g^{-1/2} u')' = -(1/g) u'' + g'/(2 g^2) u' in the global coordinate."""
    metric.check_positive(t, points)
    g, dg = metric.jet(t, points)
    return DifferentialOperator((np.zeros_like(g), dg / (2 * g ** 2), -1.0 / g))


class Chart:
    """Arc of S^1 with chart map psi(d) = scale (d + warp sin d), d the offset from the center.

    The local coordinate is y = psi(d) + L/2 on a periodic box of length L.
    The periodic chart covers the whole circle with y = x.
    """

    def __init__(self, index: int, center: float, half_width: float, support_radius: float,
                 spacing: float, scale: float = 1.0, warp: float = 0.0, periodic: bool = False):
        if scale <= 0:
            raise ValueError(f"chart scale must be positive, got {scale}")
        if abs(warp) >= 1:
            raise ValueError(f"|warp| must be < 1 for a diffeomorphism, got {warp}")
        self.index = index
        self.center = float(center)
        self.half_width = float(half_width)
        self.support_radius = float(support_radius)
        self.spacing = float(spacing)
        self.scale = 1.0 if periodic else float(scale)
        self.warp = 0.0 if periodic else float(warp)
        self.periodic = periodic
        if periodic:
            count = int(round(TWO_PI / spacing))
            self.grid = PeriodicGrid.create(1, count, TWO_PI)
        else:
            mapped = float(self.psi(half_width) - self.psi(-half_width))
            local_spacing = self.scale * spacing
            count = 2 * int(np.ceil(mapped / local_spacing - 1e-9))
            self.grid = PeriodicGrid.create(1, count, count * local_spacing)
        samples = np.linspace(-half_width, half_width, 257)
        if np.min(self.psi1(samples)) <= 0:
            raise ValueError(f"chart {index} map is not a diffeomorphism")

    def __repr__(self):
        return (f"Chart({self.index}, center={self.center:.4f}, half_width={self.half_width:.4f}, "
                f"warp={self.warp}, grid={self.grid.points_per_dim})")

    @property
    def half_box(self) -> float:
        return 0.0 if self.periodic else self.grid.box_length / 2

    @property
    def is_gather(self) -> bool:
        """True when local primal points coincide with global grid points."""
        if self.periodic:
            return True
        steps = self.center / self.spacing
        return self.warp == 0.0 and abs(steps - round(steps)) < 1e-9

    def psi(self, d):
        d = np.asarray(d, dtype=float)
        return self.scale * (d + self.warp * np.sin(d))

    def psi1(self, d):
        return self.scale * (1.0 + self.warp * np.cos(np.asarray(d, dtype=float)))

    def psi2(self, d):
        return -self.scale * self.warp * np.sin(np.asarray(d, dtype=float))

    def offsets(self, x) -> np.ndarray:
        if self.periodic:
            return np.asarray(x, dtype=float) % TWO_PI
        return _wrap_angle(np.asarray(x, dtype=float) - self.center)

    def local_from_offset(self, d) -> np.ndarray:
        return self.psi(d) + self.half_box

    def offset_from_local(self, y) -> np.ndarray:
        u = np.asarray(y, dtype=float) - self.half_box
        if self.warp == 0.0:
            return u / self.scale
        flat = u.reshape(-1)
        root = newton(lambda d: self.psi(d) - flat, flat / self.scale, fprime=self.psi1,
                      fprime2=self.psi2, tol=1e-14, maxiter=100)
        return np.asarray(root, dtype=float).reshape(u.shape)

    def to_global(self, y) -> np.ndarray:
        return (self.center + self.offset_from_local(y)) % TWO_PI

    def in_domain(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.periodic:
            return np.ones(d.shape, dtype=bool)
        return np.abs(d) < self.half_width

    def blend_weight(self, d) -> np.ndarray:
        """1 on the partition support, 0 outside the arc."""
        d = np.asarray(d, dtype=float)
        if self.periodic:
            return np.ones(d.shape)
        width = self.half_width - self.support_radius
        return smooth_step_jet((self.half_width - np.abs(d)) / width)[0]

    def pull_matrix(self, global_grid: PeriodicGrid) -> np.ndarray:
        """Global samples -> local primal samples (rows outside the arc are zero unless gathered)."""
        count = global_grid.points_per_dim
        d = self.offset_from_local(self.grid.axis_points())
        if self.is_gather:
            index = np.rint((self.center + d) / self.spacing).astype(int) % count
            matrix = np.zeros((self.grid.size, count))
            matrix[np.arange(self.grid.size), index] = 1.0
            return matrix
        matrix = trig_interpolation_matrix(count, TWO_PI, (self.center + d) % TWO_PI)
        matrix[~self.in_domain(d)] = 0.0
        return matrix

    def push_matrix(self, global_grid: PeriodicGrid) -> np.ndarray:
        """Local primal samples -> global samples inside the arc."""
        d = self.offsets(global_grid.axis_points())
        mask = self.in_domain(d)
        matrix = np.zeros((global_grid.size, self.grid.size))
        y = self.local_from_offset(d[mask])
        if self.is_gather:
            index = np.rint(y / self.grid.spacing).astype(int) % self.grid.size
            matrix[np.flatnonzero(mask), index] = 1.0
            return matrix
        matrix[mask] = trig_interpolation_matrix(self.grid.size, self.grid.box_length, y)
        return matrix


class ChartAtlas:
    """Fine charts with a squared partition of unity, neighbour tables and coarse charts."""

    def __init__(self, charts: List[Chart], global_grid: PeriodicGrid, support_radius: float,
                 coarse_charts: Optional[List[Chart]] = None, trivial: bool = False):
        self.charts = list(charts)
        self.global_grid = global_grid
        self.support_radius = float(support_radius)
        self.coarse_charts = list(coarse_charts or [])
        self.trivial = trivial
        self.neighbors = self._neighbor_table()
        self.second_neighbors = [sorted({l for j in self.neighbors[i] for l in self.neighbors[j]})
                                 for i in range(len(self.charts))]
        self.assignment = list(range(len(self.charts))) if self.coarse_charts else []
        if not trivial:
            margin = min(chart.half_width for chart in self.charts) - self.support_radius
            if margin < MIN_MARGIN_CELLS * global_grid.spacing:
                raise SupportMarginError(
                    f"partition support margin {margin:.4g} is below {MIN_MARGIN_CELLS} grid cells")
        self._matrices: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def __repr__(self):
        return f"ChartAtlas({len(self.charts)} charts, {len(self.coarse_charts)} coarse, grid={self.global_grid})"

    @classmethod
    def trivial_atlas(cls, grid: PeriodicGrid) -> 'ChartAtlas':
        chart = Chart(0, 0.0, np.pi, np.pi, grid.spacing, periodic=True)
        return cls([chart], grid, np.pi, trivial=True)

    @classmethod
    def circle(cls, grid: PeriodicGrid, count: int = 2, overlap: float = OVERLAP_FACTOR,
               warp: float = 0.0, scale: float = 1.0) -> 'ChartAtlas':
        """count equally spaced arcs of half-width overlap*pi/count."""
        if count < 2:
            raise ValueError("a circle atlas needs at least two charts")
        if overlap <= 1:
            raise ValueError(f"overlap factor must exceed 1, got {overlap}")
        spacing = TWO_PI / count
        half_width = overlap * np.pi / count
        support = half_width - (overlap - 1) * np.pi / (2 * count)
        charts = [Chart(i, i * spacing, half_width, support, grid.spacing, scale, warp) for i in range(count)]
        coarse = []
        coarse_half = 2 * spacing + half_width + spacing / 8
        if coarse_half < np.pi:
            coarse = [Chart(i, i * spacing, coarse_half, coarse_half - spacing / 8, grid.spacing) for i in range(count)]
        else:
            logger.info(f"[ATLAS] {count} charts: no coarse atlas (second neighbours span {2 * coarse_half:.3f})")
        return cls(charts, grid, support, coarse)

    def _neighbor_table(self) -> List[List[int]]:
        table = []
        for chart in self.charts:
            row = []
            for other in self.charts:
                distance = abs(_wrap_angle(chart.center - other.center))
                if chart.periodic or distance < chart.half_width + other.half_width:
                    row.append(other.index)
            table.append(row)
        return table

    def coefficient_points(self) -> np.ndarray:
        return self.global_grid.midpoint_axis()

    def bump_jets(self, x) -> List[Jet]:
        x = np.asarray(x, dtype=float)
        jets = []
        width = self.support_radius
        for chart in self.charts:
            d = chart.offsets(x)
            s = (self.support_radius - np.abs(d)) / width
            sigma, d1, d2 = smooth_step_jet(s)
            slope = -np.sign(d) / width
            jets.append((sigma, d1 * slope, d2 * slope ** 2))
        return jets

    def partition_jets(self, x) -> List[Jet]:
        """(phi_i, phi_i', phi_i'') with phi_i = b_i / sqrt(sum_j b_j^2)."""
        x = np.asarray(x, dtype=float)
        if self.trivial:
            return [(np.ones(x.shape), np.zeros(x.shape), np.zeros(x.shape))]
        bumps = self.bump_jets(x)
        S = sum(b[0] ** 2 for b in bumps)
        S1 = sum(2 * b[0] * b[1] for b in bumps)
        S2 = sum(2 * (b[1] ** 2 + b[0] * b[2]) for b in bumps)
        if np.any(S <= 0):
            raise SupportMarginError("partition functions do not cover the circle")
        root = S ** -0.5
        jets = []
        for b, b1, b2 in bumps:
            phi = b * root
            phi1 = b1 * root - 0.5 * b * S ** -1.5 * S1
            phi2 = (b2 * root - b1 * S ** -1.5 * S1 + 0.75 * b * S ** -2.5 * S1 ** 2
                    - 0.5 * b * S ** -1.5 * S2)
            jets.append((phi, phi1, phi2))
        return jets

    def partition_values(self, x) -> List[np.ndarray]:
        return [jet[0] for jet in self.partition_jets(x)]

    def partition_defect(self) -> float:
        """max |sum phi_i^2 - 1| over the global grid and its midpoints."""
        points = self.coefficient_points()
        total = sum(phi ** 2 for phi in self.partition_values(points))
        return float(np.max(np.abs(total - 1.0)))

    def transfer_matrices(self, chart: Chart) -> Tuple[np.ndarray, np.ndarray]:
        with self._lock:
            if chart.index not in self._matrices:
                self._matrices[chart.index] = (chart.pull_matrix(self.global_grid),
                                               chart.push_matrix(self.global_grid))
            return self._matrices[chart.index]

    def local_partition(self, chart: Chart) -> np.ndarray:
        """phi_i at the local primal points, zero outside the arc."""
        d = chart.offset_from_local(chart.grid.axis_points())
        phi = self.partition_values(chart.to_global(chart.grid.axis_points()))[chart.index]
        return np.where(chart.in_domain(d), phi, 0.0)


def _probe_jets(x) -> List[Jet]:
    x = np.asarray(x, dtype=float)
    jets = []
    for k in range(1, PROBE_MAX_DEGREE + 1):
        jets.append((np.cos(k * x), -k * np.sin(k * x), -k * k * np.cos(k * x)))
        jets.append((np.sin(k * x), k * np.cos(k * x), -k * k * np.sin(k * x)))
    return jets


def q_coefficients(A: DifferentialOperator, partition: Sequence[Jet]) -> Tuple[DifferentialOperator, ...]:
    """(Q2, Q1, Q0) with Q2 = A and Q_{k-1} = -sum_i [phi_i, Q_k] phi_i."""
    levels = [A]
    for _ in range(2):
        current = levels[-1]
        total = None
        for jet in partition:
            term = current.commutator(jet).right_multiply(jet)
            total = term if total is None else total + term
        levels.append(-total)
    return tuple(levels)


class ManifoldOperatorQ:
    """Q(t) = Q2 + Q1 + Q0 sampled on the coefficient points, re-evaluable anywhere."""

    def __init__(self, levels: Tuple[DifferentialOperator, ...], points: np.ndarray, atlas: ChartAtlas,
                 source: Optional[Callable[[np.ndarray], DifferentialOperator]] = None,
                 time: Optional[float] = None):
        self.levels = levels
        self.points = points
        self.atlas = atlas
        self.source = source
        self.time = time
        self.total = levels[0] + levels[1] + levels[2]

    def __repr__(self):
        return f"ManifoldOperatorQ(t={self.time}, points={len(self.points)})"

    def coefficients_at(self, x) -> Tuple[np.ndarray, ...]:
        """(c0, c1, c2) of Q at arbitrary points of S^1."""
        x = np.asarray(x, dtype=float)
        if self.source is None:
            raise ValueError("Q was built from sampled coefficients only")
        levels = q_coefficients(self.source(x), self.atlas.partition_jets(x))
        total = (levels[0] + levels[1] + levels[2]).padded(2)
        return total.coefficients


def check_q_identity(A: DifferentialOperator, Q: DifferentialOperator, partition: Sequence[Jet],
                     points: np.ndarray) -> float:
    """max over 16 trig probes of |sum phi_i Q (phi_i u) - A u| / (|u| + |u'| + |u''|)."""
    worst = 0.0
    for probe in _probe_jets(points):
        expected = A.apply_jet(probe)
        glued = sum(jet[0] * Q.apply_jet(jet_product(jet, probe)) for jet in partition)
        scale = float(np.max(np.abs(probe[0]) + np.abs(probe[1]) + np.abs(probe[2])))
        worst = max(worst, float(np.max(np.abs(glued - expected))) / scale)
    return worst


def build_Q(A: DifferentialOperator, atlas: ChartAtlas, points: Optional[np.ndarray] = None,
            source: Optional[Callable[[np.ndarray], DifferentialOperator]] = None,
            time: Optional[float] = None) -> ManifoldOperatorQ:
    """Q from A sampled at ``points`` (default: the atlas coefficient points); verifies A = sum phi Q phi."""
    points = atlas.coefficient_points() if points is None else np.asarray(points, dtype=float)
    partition = atlas.partition_jets(points)
    levels = q_coefficients(A, partition)
    total = levels[0] + levels[1] + levels[2]
    defect = check_q_identity(A, total, partition, points)
    if defect > IDENTITY_TOL:
        raise IdentityCheckError(f"sum phi_i Q phi_i differs from A by {defect:.3e}")
    logger.debug(f"[ATLAS] Q identity defect {defect:.3e}")
    return ManifoldOperatorQ(levels, points, atlas, source, time)


class QFamily:
    """Q(t) for a metric and atlas, built on demand and cached per time."""

    def __init__(self, metric: MetricField, atlas: ChartAtlas):
        self.metric = metric
        self.atlas = atlas
        self._cache: Dict[float, ManifoldOperatorQ] = {}
        self._lock = threading.Lock()

    def at(self, t: float) -> ManifoldOperatorQ:
        with self._lock:
            Q = self._cache.get(t)
            if Q is None:
                source = lambda x, tt=t: build_laplace_beltrami(self.metric, tt, x)
                points = self.atlas.coefficient_points()
                Q = build_Q(source(points), self.atlas, points, source, t)
                self._cache[t] = Q
            return Q


class ChartCoefficients(NamedTuple):
    """Blended chart coefficients and their y-derivatives on the local midpoint grid."""
    values: Tuple[np.ndarray, np.ndarray, np.ndarray]
    first: Tuple[np.ndarray, np.ndarray, np.ndarray]
    second: Tuple[np.ndarray, np.ndarray, np.ndarray]
    third: Tuple[np.ndarray, np.ndarray, np.ndarray]


def chart_coefficients_at(Q: ManifoldOperatorQ, chart: Chart, y) -> Tuple[np.ndarray, ...]:
    """(c~0, c~1, c~2) of Q in the chart coordinate at local points y, blended outside the arc."""
    d = chart.offset_from_local(y)
    c0, c1, c2 = Q.coefficients_at(chart.to_global(y))
    local = transport_coefficients(c0, c1, c2, chart.psi1(d), chart.psi2(d))
    weight = chart.blend_weight(d)
    return tuple(weight * c + (1 - weight) * bar for c, bar in zip(local, HEAT_COEFFICIENTS))


def chart_coefficients(Q: ManifoldOperatorQ, chart: Chart) -> ChartCoefficients:
    y = chart.grid.midpoint_axis()
    values = chart_coefficients_at(Q, chart, y)
    length = chart.grid.box_length
    derivs = [tuple(spectral_derivative(v, length, k) for v in values) for k in (1, 2, 3)]
    return ChartCoefficients(values, derivs[0], derivs[1], derivs[2])


def chart_symbol(Q: ManifoldOperatorQ, chart: Chart) -> SymbolFunction:
    """Weyl symbol of Q in chart coordinates, exact for the differential coefficients."""
    coeffs = chart_coefficients(Q, chart)
    (c0, c1, c2), (e0, e1, e2), (f0, f1, f2), (_, _, g2) = coeffs
    length = chart.grid.box_length
    arrays = {'c0': c0, 'c1': c1, 'c2': c2, 'e0': e0, 'e1': e1, 'e2': e2, 'f1': f1, 'f2': f2, 'g2': g2}

    def at(x):
        points = np.asarray(x[0], dtype=float)
        matrix = trig_interpolation_matrix(len(c0), length, points)
        return {key: (matrix @ arr).reshape(points.shape) for key, arr in arrays.items()}

    def value(x, xi):
        v = at(x)
        return differential_weyl_symbol(v['c0'], v['c1'], v['c2'], v['e1'], v['e2'], v['f2'], xi[0])

    def d_x(x, xi, axis):
        v = at(x)
        return differential_weyl_symbol(v['e0'], v['e1'], v['e2'], v['f1'], v['f2'], v['g2'], xi[0])

    def d_xi(x, xi, axis):
        v = at(x)
        return -2 * v['c2'] * xi[0] + 1j * (v['c1'] - v['e2'])

    return SymbolFunction.stationary(value, order=2.0, dim=1, dx=d_x, dxi=d_xi,
                                     name=f"q_{chart.index}(t={Q.time})")


class LocalStep(NamedTuple):
    """phi_i psi_i^* p^w (psi_i^{-1})^* phi_i as pull, cutoff, local Weyl operator, cutoff, push."""
    chart_index: int
    pull: np.ndarray
    push: np.ndarray
    cutoff: np.ndarray
    weyl: QuantizedOperator

    def matrix(self) -> np.ndarray:
        local = self.cutoff[:, None] * self.weyl.matrix() * self.cutoff[None, :]
        return self.push @ local @ self.pull


def local_step(family: QFamily, chart: Chart, t: float, t_prime: float) -> LocalStep:
    if t_prime < t:
        raise ValueError(f"step needs t <= t', got t={t}, t'={t_prime}")
    atlas = family.atlas
    symbol = chart_symbol(family.at(t), chart)
    weyl = quantize(exp_symbol(symbol, t, t_prime - t, chart.grid))
    pull, push = atlas.transfer_matrices(chart)
    return LocalStep(chart.index, pull, push, atlas.local_partition(chart), weyl)


def global_step(family: QFamily, t: float, t_prime: float) -> MatrixStep:
    """sum_i P_(i, (t', t)) in fixed chart order."""
    atlas = family.atlas
    if t_prime == t:
        return MatrixStep(atlas.global_grid, np.eye(atlas.global_grid.size))
    steps = run_points(lambda chart: local_step(family, chart, t, t_prime).matrix(), atlas.charts,
                       'local-steps')
    total = np.zeros((atlas.global_grid.size,) * 2, dtype=complex)
    for matrix in steps:
        total += matrix
    return MatrixStep(atlas.global_grid, total)


class ManifoldMultiProduct:
    """W_(P, t) with global steps as factors; factors cached per knot."""

    def __init__(self, family: QFamily, subdivision: Subdivision):
        self.family = family
        self.subdivision = subdivision
        self.grid = family.atlas.global_grid
        self._factors: Dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def factor(self, k: int) -> np.ndarray:
        with self._lock:
            if k not in self._factors:
                knots = self.subdivision.knots
                self._factors[k] = global_step(self.family, knots[k], knots[k + 1]).matrix
            return self._factors[k]

    def apply_array(self, t: float, data: np.ndarray) -> np.ndarray:
        k = self.subdivision.locate(t)
        out = np.asarray(data, dtype=complex)
        for i in range(k):
            out = self.factor(i) @ out
        start = self.subdivision.knots[k]
        if t == start:
            return out
        if t == self.subdivision.knots[k + 1]:
            return self.factor(k) @ out
        return global_step(self.family, start, t).matrix @ out

    def knot_arrays(self, data: np.ndarray) -> List[np.ndarray]:
        current = np.asarray(data, dtype=complex)
        values = [current]
        for k in range(self.subdivision.steps):
            current = self.factor(k) @ current
            values.append(current)
        return values


def manifold_multiproduct(family: QFamily, subdivision: Subdivision, t: float, u0: GridField) -> GridField:
    mp = ManifoldMultiProduct(family, subdivision)
    return GridField(u0.grid, mp.apply_array(t, u0.flat()).reshape(u0.grid.shape))


def weighted_norm(matrix: np.ndarray, metric: MetricField, grid: PeriodicGrid, seed: int = 0) -> float:
    """Norm on L2(g_0^{1/2} dx)."""
    root = np.sqrt(metric.density(grid.axis_points()))
    chain = [MultiplicationStep(grid, 1.0 / root), MatrixStep(grid, matrix), MultiplicationStep(grid, root)]
    return operator_norm(chain, 0.0, 0.0, grid, seed=seed, max_iter=NORM_MAX_ITER).value


def _weighted_l2(grid: PeriodicGrid, metric: MetricField, values: np.ndarray) -> float:
    density = metric.density(grid.axis_points())
    return float(np.sqrt(grid.cell_volume * np.sum(np.abs(values) ** 2 * density)))


class ManifoldStabilityReport(NamedTuple):
    rows: List[ResultRow]
    constant: float
    variation: float


def l2_stability_check(family: QFamily, h_list: Sequence[float], t: float = 0.0,
                       seed: int = 0, progress_callback: Optional[ProgressCallback] = None) -> ManifoldStabilityReport:
    """||P_(t+h, t)|| on L2(g_0^{1/2} dx) over h with the empirical constant max (norm - 1)/h."""
    grid = family.atlas.global_grid
    h_values = sorted((float(h) for h in h_list), reverse=True)
    norms = run_points(lambda h: weighted_norm(global_step(family, t, t + h).matrix, family.metric, grid, seed),
                       h_values, 'manifold-step-norm', progress_callback)
    rows = [ResultRow(h, v, 'manifold-step-norm', 0.0, 0.0, family.metric.alpha, 1, grid.points_per_dim)
            for h, v in zip(h_values, norms)]
    ratios = [max(0.0, (v - 1.0) / h) for h, v in zip(h_values, norms) if h > 0]
    constant = max(ratios, default=0.0)
    finest = ratios[-3:]
    top = max(finest, default=0.0)
    variation = 0.0 if top <= 1e-8 else (top - min(finest)) / top
    logger.info(f"[ATLAS] weighted step norms: C_fit={constant:.4g} variation={variation:.3f}")
    return ManifoldStabilityReport(rows, float(constant), float(variation))


def spectral_derivative_matrices(grid: PeriodicGrid) -> Tuple[np.ndarray, np.ndarray]:
    identity = np.eye(grid.size)
    first = spectral_derivative(identity, grid.box_length, 1, axis=0)
    second = spectral_derivative(identity, grid.box_length, 2, axis=0)
    return first, second


def global_operator_matrix(metric: MetricField, t: float, grid: PeriodicGrid,
                           derivatives: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> np.ndarray:
    """A(t) as a spectral collocation matrix on the global grid."""
    first, second = derivatives or spectral_derivative_matrices(grid)
    A = build_laplace_beltrami(metric, t, grid.axis_points())
    _, c1, c2 = A.coefficients
    return c2[:, None] * second + c1[:, None] * first


def manifold_generator(metric: MetricField, grid: PeriodicGrid):
    """(generator, t -> s) for U' = -A(t) U.

    A metric with a dyadic rate integrates in s = int_0^t c with the constant
    generator -A_1; Hoelder metrics with alpha < 1 integrate in s = t^alpha.
    """
    derivatives = spectral_derivative_matrices(grid)
    if metric.rate is not None:
        base = global_operator_matrix(metric, 0.0, grid, derivatives) / metric.rate(0.0)
        return (lambda s: -base), metric.rate.integral
    cache: Dict[float, np.ndarray] = {}
    lock = threading.Lock()

    def operator_at(t):
        with lock:
            if t not in cache:
                cache[t] = global_operator_matrix(metric, t, grid, derivatives)
            return cache[t]

    if not metric.time_dependent:
        frozen = global_operator_matrix(metric, 0.0, grid, derivatives)
        return (lambda t: -frozen), (lambda t: t)
    alpha = metric.alpha
    if alpha < 1.0:
        power = 1.0 / alpha

        def generator(tau):
            tau = max(tau, 0.0)
            return -(power * tau ** (power - 1.0)) * operator_at(tau ** power)

        return generator, (lambda t: t ** alpha)
    return (lambda t: -operator_at(t)), (lambda t: t)


def manifold_reference(metric: MetricField, grid: PeriodicGrid, times: Sequence[float], data: np.ndarray,
                       tol: float, solvers: Tuple[str, str] = ('magnus', 'method_of_lines')):
    """Certified global spectral reference U(t, 0) data at each time."""
    generator, to_s = manifold_generator(metric, grid)
    primary, info = evolve_at_times(generator, to_s, times, data, tol, solvers[0])
    secondary, _ = evolve_at_times(generator, to_s, times, data, tol, solvers[1])
    disagreement = compare_solutions(primary, secondary, tol, solvers)
    return primary, info._replace(solver=f"{solvers[0]}+{solvers[1]}",
                                  tolerance=max(info.tolerance, disagreement), certified=True)


class ManifoldSweepReport(NamedTuple):
    rows: List[ResultRow]
    fits: List[RateFit]


def manifold_convergence_sweep(family: QFamily, T: float, N_list: Sequence[int], tol: float = 1e-9,
                               seed: int = 0, width: float = 0.25, probe_count: int = 8,
                               progress_callback: Optional[ProgressCallback] = None) -> ManifoldSweepReport:
    """Multi-product vs spectral reference: final-time weighted-L2 error over H^1 probes and
    the time-integrated error of the first probe, both fitted against alpha +- width."""
    grid = family.atlas.global_grid
    metric = family.metric
    alpha = metric.alpha
    probes = probe_basis(grid, 1.0, seed, probe_count)
    knots = sorted({Fraction(k, n) for n in N_list for k in range(1, n + 1)})
    reference, _ = manifold_reference(metric, grid, [float(k) * T for k in knots], probes, tol)
    by_time = dict(zip(knots, reference))

    def measure(steps):
        mp = ManifoldMultiProduct(family, Subdivision.uniform(T, steps))
        trajectory = mp.knot_arrays(probes)
        final = trajectory[-1] - by_time[Fraction(1)]
        surrogate = max(_weighted_l2(grid, metric, final[:, j]) for j in range(probe_count))
        integrated = np.sqrt(sum(_weighted_l2(grid, metric, trajectory[k][:, 0] - by_time[Fraction(k, steps)][:, 0]) ** 2
                                 for k in range(1, steps + 1)) * T / steps)
        return surrogate, integrated

    results = run_points(measure, list(N_list), 'manifold-convergence', progress_callback)
    scales = [T / n for n in N_list]
    rows, fits = [], []
    for index, metric_name in enumerate(('manifold-final-time', 'manifold-time-integrated')):
        values = [r[index] for r in results]
        rows.extend(ResultRow(h, v, metric_name, 0.0, 0.0, alpha, 1, grid.points_per_dim)
                    for h, v in zip(scales, values))
        fits.append(fit_rate(list(zip(scales, values)), centered_band(alpha, width), metric_name,
                             zero_tol=100 * tol))
    return ManifoldSweepReport(rows, fits)


def manifold_consistency_sweep(family: QFamily, t: float, h_list: Sequence[float], width: float = 0.25,
                               seed: int = 0,
                               progress_callback: Optional[ProgressCallback] = None) -> ManifoldSweepReport:
    """||A(t+h) P_(t+h, t) - sum_i phi_i psi_i^* (q_i p_i)^w (psi_i^{-1})^* phi_i||_(L2, H^-2) over h."""
    atlas = family.atlas
    grid = atlas.global_grid
    derivatives = spectral_derivative_matrices(grid)
    alpha = family.metric.alpha
    h_values = sorted((float(h) for h in h_list), reverse=True)

    def derivative_term(chart, h):
        symbol = chart_symbol(family.at(t), chart)
        p = exp_symbol(symbol, t, h, chart.grid)
        q = sample(symbol, t, chart.grid)
        pull, push = atlas.transfer_matrices(chart)
        cutoff = atlas.local_partition(chart)
        local = cutoff[:, None] * quantize(q * p).matrix() * cutoff[None, :]
        return push @ local @ pull

    def measure(h):
        step_matrix = global_step(family, t, t + h).matrix
        generator = global_operator_matrix(family.metric, t + h, grid, derivatives)
        chart_terms = sum(derivative_term(chart, h) for chart in atlas.charts)
        defect = generator @ step_matrix - chart_terms
        return operator_norm([MatrixStep(grid, defect)], 0.0, -2.0, grid, seed=seed, max_iter=NORM_MAX_ITER).value

    values = run_points(measure, h_values, 'manifold-consistency', progress_callback)
    rows = [ResultRow(h, v, 'manifold-consistency', 0.0, 0.0, alpha, 1, grid.points_per_dim)
            for h, v in zip(h_values, values)]
    fit = fit_rate(list(zip(h_values, values)), centered_band(alpha, width), 'manifold-consistency')
    return ManifoldSweepReport(rows, [fit])


class ManifoldStabilitySweep(NamedTuple):
    rows: List[ResultRow]
    bound: float
    passed: bool


def manifold_stability_sweep(family: QFamily, T: float, N_list: Sequence[int], constant: float, seed: int = 0,
                             progress_callback: Optional[ProgressCallback] = None) -> ManifoldStabilitySweep:
    """sup over knots of the weighted norm of W_(P, t_k) against e^{C T}."""
    grid = family.atlas.global_grid
    identity = np.eye(grid.size, dtype=complex)

    def measure(steps):
        mp = ManifoldMultiProduct(family, Subdivision.uniform(T, steps))
        return max(weighted_norm(W, family.metric, grid, seed) for W in mp.knot_arrays(identity))

    sups = run_points(measure, list(N_list), 'manifold-stability', progress_callback)
    bound = float(np.exp(max(constant, 0.0) * T))
    rows = [ResultRow(n, v, 'manifold-stability-sup-norm', 0.0, 0.0, family.metric.alpha, 1, grid.points_per_dim)
            for n, v in zip(N_list, sups)]
    return ManifoldStabilitySweep(rows, bound, bool(max(sups) <= bound * (1 + 1e-9)))


def atlas_consistency(family: QFamily, t: float = 0.0) -> Optional[float]:
    """Largest mismatch between fine-chart coefficients and coarse-chart coefficients carried
    through the transition maps, on the partition supports; None without a coarse atlas."""
    atlas = family.atlas
    if not atlas.coarse_charts:
        return None
    Q = family.at(t)
    worst = 0.0
    for chart in atlas.charts:
        coarse = atlas.coarse_charts[atlas.assignment[chart.index]]
        d = np.linspace(-atlas.support_radius, atlas.support_radius, 65)
        y = chart.local_from_offset(d)
        fine = chart_coefficients_at(Q, chart, y)
        z = coarse.local_from_offset(coarse.offsets(chart.center + d))
        c0, c1, c2 = chart_coefficients_at(Q, coarse, z)
        carried = transport_coefficients(c0, c1, c2, chart.psi1(d), chart.psi2(d))
        scale = max(float(np.max(np.abs(fine[2]))), 1.0)
        worst = max(worst, max(float(np.max(np.abs(a - b))) for a, b in zip(fine, carried)) / scale)
    logger.info(f"[ATLAS] coarse/fine coefficient mismatch {worst:.3e}")
    return worst
