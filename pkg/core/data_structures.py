"""Core data structures for experiment results."""
from typing import Dict, List, NamedTuple, Optional, Tuple

CSV_COLUMNS = ('scale', 'error', 'metric', 's', 'r', 'alpha', 'grid_n', 'grid_N')


class ResultRow(NamedTuple):
    """One measured point of a sweep; field order is the CSV column order."""
    scale: float
    error: float
    metric: str
    s: float = 0.0
    r: float = 0.0
    alpha: float = 1.0
    grid_n: int = 1
    grid_N: int = 0


class RateFit(NamedTuple):
    """Least-squares slope of log2(error) against log2(scale) with its pass band."""
    metric: str
    slope: Optional[float]
    intercept: Optional[float]
    residuals: Tuple[float, ...]
    band: Tuple[float, Optional[float]]
    passed: bool
    exact: bool = False
    dropped: Tuple[float, ...] = ()
    points: int = 0

    def to_dict(self) -> Dict:
        return {
            'metric': self.metric,
            'slope': self.slope,
            'intercept': self.intercept,
            'residuals': list(self.residuals),
            'band': [self.band[0], self.band[1]],
            'passed': self.passed,
            'exact': self.exact,
            'dropped': list(self.dropped),
            'points': self.points,
        }


class CheckResult(NamedTuple):
    """A named pass/fail assertion that is not a slope fit (bounds, identities, correlations)."""
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ''

    def to_dict(self) -> Dict:
        return dict(self._asdict())


class ExperimentResult(NamedTuple):
    """Everything one experiment run produces."""
    experiment: str
    name: str
    rows: List[ResultRow]
    fits: List[RateFit]
    checks: List[CheckResult]
    summary: Dict
    notes: List[str]

    @property
    def passed(self) -> bool:
        return all(fit.passed for fit in self.fits) and all(check.passed for check in self.checks)
