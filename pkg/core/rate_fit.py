# core/rate_fit.py

"""Log-log slope fitting for convergence and remainder sweeps."""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from core.data_structures import RateFit

logger = logging.getLogger(__name__)

MIN_POINTS = 4
DROP_THRESHOLD = 0.25


def _least_squares(log_scale: np.ndarray, log_error: np.ndarray):
    slope, intercept = np.polyfit(log_scale, log_error, 1)
    residuals = log_error - (slope * log_scale + intercept)
    return float(slope), float(intercept), residuals


def fit_rate(points: Sequence[Tuple[float, float]], band: Tuple[float, Optional[float]] = (0.0, None),
             metric: str = 'error', zero_tol: float = 0.0, allow_drop: bool = True) -> RateFit:
    """Fits error ~ C * scale^slope on log2 data.

    ``band`` is (lo, hi) with hi=None for a one-sided lower bound. Errors at or
    below ``zero_tol`` everywhere make an exact pass with no slope. The
    largest-scale point is dropped when its distance from the fit of the other
    points exceeds three times their residuals and DROP_THRESHOLD (log2 units);
    at least five points are needed and the drop is recorded.
    """
    pts = [(float(scale), float(error)) for scale, error in points]
    if len(pts) < MIN_POINTS:
        raise ValueError(f"rate fit needs at least {MIN_POINTS} points, got {len(pts)}")
    if any(scale <= 0 for scale, _ in pts):
        raise ValueError("scales must be positive")
    lo, hi = float(band[0]), (None if band[1] is None else float(band[1]))

    errors = np.array([error for _, error in pts])
    if np.all(np.abs(errors) <= zero_tol):
        logger.info(f"[FIT] {metric}: all errors below {zero_tol:g}, exact pass")
        return RateFit(metric, None, None, tuple(0.0 for _ in pts), (lo, hi), True, True, (), len(pts))
    if np.any(errors <= 0):
        raise ValueError(f"{metric}: errors must be positive unless all vanish")

    pts.sort(key=lambda item: item[0])
    log_scale = np.log2([scale for scale, _ in pts])
    log_error = np.log2([error for _, error in pts])
    slope, intercept, residuals = _least_squares(log_scale, log_error)
    dropped = ()
    if allow_drop and len(pts) >= MIN_POINTS + 1:
        # residual of the largest scale against the fit of the remaining points
        inner_slope, inner_intercept, inner_residuals = _least_squares(log_scale[:-1], log_error[:-1])
        last = abs(log_error[-1] - (inner_slope * log_scale[-1] + inner_intercept))
        rest = float(np.max(np.abs(inner_residuals)))
        if last > 3 * rest and last > DROP_THRESHOLD:
            dropped = (pts[-1][0],)
            slope, intercept, residuals = inner_slope, inner_intercept, inner_residuals
            logger.info(f"[FIT] {metric}: dropped pre-asymptotic point at scale {pts[-1][0]:g}")
    passed = slope >= lo and (hi is None or slope <= hi)
    logger.info(f"[FIT] {metric}: slope={slope:.4f} band=[{lo:g}, {hi if hi is not None else 'inf'}] "
                f"{'PASS' if passed else 'FAIL'}")
    return RateFit(metric, slope, intercept, tuple(float(v) for v in residuals), (lo, hi),
                   bool(passed), False, dropped, len(pts) - len(dropped))


def centered_band(exponent: float, width: float) -> Tuple[float, float]:
    return (exponent - width, exponent + width)


def window_band(low: float, high: float, width: float = 0.25) -> Tuple[float, float]:
    """[low - width, high + width] for a rate known to lie between two exponents."""
    return (low - width, high + width)
