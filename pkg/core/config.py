# core/config.py

"""Experiment configuration: TOML files merged over defaults, environment overrides, validation."""
import copy
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from core.errors import ConfigError
from core.symbols import DyadicProfile

logger = logging.getLogger(__name__)

ENV_PREFIX = 'MULTIPRODUCT_'
EXPERIMENTS = ('sharp-norm', 'stability', 'consistency', 'convergence-rn', 'convergence-manifold',
               'composition-remainders', 'pullback-residual', 'quantization-oracle')
FORMATS = ('csv', 'json', 'both')
RATE_FIT_EXPERIMENTS = ('consistency', 'convergence-rn', 'convergence-manifold',
                        'composition-remainders', 'pullback-residual')
MIN_SWEEP_POINTS = 4

DEFAULTS: Dict[str, Any] = {
    'experiment': None,
    'name': '',
    'seed': 0,
    'grid': {'n': 1, 'N': 64, 'L': 2 * math.pi},
    'symbol': {
        'preset': 'curved-1d',
        'principal': [],
        'lower': [],
        'principal_increment': [],
        'lower_increment': [],
        'alpha': 1.0,
        'ellipticity': 0.0,
    },
    'sweep': {
        'h_list': None,
        'k_min': 4,
        'k_max': 10,
        'N_list': None,
        't': 0.0,
        'T': 0.5,
        's': 0.0,
        'r': 0.0,
        'tol': 1e-9,
        'resolve_tol': 1e-6,
    },
    'output': {'path': 'results', 'format': 'both'},
    'manifold': {
        'charts': 2,
        'overlap': 1.5,
        'warp': 0.0,
        'scale': 1.0,
        'amplitude': 0.3,
        'increment': 0.3,
        'alpha': 1.0,
        'profile': 'power',
    },
    'pullback': {'kinds': ['identity', 'affine', 'generic'], 'slope': 1.25, 'amplitude': 0.3},
    'oracle': {'count': 20, 'N_2d': 32, 'tolerance': 1e-10},
    'bands': {
        'consistency_width': 0.15,
        'convergence_width': 0.25,
        'manifold_width': 0.25,
        'remainder_min': 0.9,
        'left_max': 0.75,
        'pullback_min': 0.8,
        'variation_max': 0.25,
        'correlation_max': 0.5,
    },
}


class GridSpec(NamedTuple):
    n: int
    N: int
    L: float


class SymbolSpec(NamedTuple):
    preset: Optional[str]
    principal: Tuple[Dict, ...]
    lower: Tuple[Dict, ...]
    principal_increment: Tuple[Dict, ...]
    lower_increment: Tuple[Dict, ...]
    alpha: float
    ellipticity: float


class SweepSpec(NamedTuple):
    h_list: Tuple[float, ...]
    N_list: Tuple[int, ...]
    t: float
    T: float
    s: float
    r: float
    tol: float
    resolve_tol: Optional[float]


class OutputSpec(NamedTuple):
    path: Path
    format: str


class ManifoldSpec(NamedTuple):
    charts: int
    overlap: float
    warp: float
    scale: float
    amplitude: float
    increment: float
    alpha: float
    profile: str = 'power'


class PullbackSpec(NamedTuple):
    kinds: Tuple[str, ...]
    slope: float
    amplitude: float


class OracleSpec(NamedTuple):
    count: int
    N_2d: int
    tolerance: float


class BandSpec(NamedTuple):
    consistency_width: float
    convergence_width: float
    manifold_width: float
    remainder_min: float
    left_max: float
    pullback_min: float
    variation_max: float
    correlation_max: float


class ExperimentConfig(NamedTuple):
    """Validated, immutable experiment description."""
    experiment: str
    name: str
    seed: int
    grid: GridSpec
    symbol: SymbolSpec
    sweep: SweepSpec
    output: OutputSpec
    manifold: ManifoldSpec
    pullback: PullbackSpec
    oracle: OracleSpec
    bands: BandSpec
    source: Optional[Path] = None

    def to_dict(self) -> Dict[str, Any]:
        """Plain-data echo of the resolved configuration (paths as strings)."""
        def plain(value):
            if isinstance(value, tuple) and hasattr(value, '_asdict'):
                return {key: plain(item) for key, item in value._asdict().items()}
            if isinstance(value, (list, tuple)):
                return [plain(item) for item in value]
            if isinstance(value, Path):
                return str(value)
            return value
        return plain(self)


def _merge(base: Dict, loaded: Mapping) -> Dict:
    merged = copy.deepcopy(base)
    for key, value in loaded.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Config:
    """Experiment configuration manager: defaults merged with a TOML file and overrides."""

    def __init__(self, config_file: Optional[Path] = None):
        self.config_file = Path(config_file) if config_file else None
        self.default_config = copy.deepcopy(DEFAULTS)
        self.config = self.load_config()

    def load_config(self) -> Dict:
        """Load configuration from file."""
        if self.config_file is None:
            return copy.deepcopy(self.default_config)
        try:
            with open(self.config_file, 'rb') as f:
                loaded = tomllib.load(f)
        except FileNotFoundError:
            raise ConfigError('config', f"file not found: {self.config_file}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigError('config', f"cannot parse {self.config_file}: {e}") from None
        unknown = sorted(set(loaded) - set(self.default_config))
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        logger.debug(f"[CONFIG] loaded {self.config_file}")
        return _merge(self.default_config, loaded)

    def get(self, key: str, default=None):
        """Get a value by dotted path, e.g. ``grid.N``."""
        node = self.config
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value):
        """Set a value by dotted path."""
        parts = key.split('.')
        node = self.config
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value

    def apply_environment(self, environ: Optional[Mapping[str, str]] = None):
        """MULTIPRODUCT_SEED / _OUT / _FORMAT override the file."""
        environ = os.environ if environ is None else environ
        mapping = {'SEED': 'seed', 'OUT': 'output.path', 'FORMAT': 'output.format'}
        for suffix, key in mapping.items():
            value = environ.get(ENV_PREFIX + suffix)
            if value:
                logger.debug(f"[CONFIG] {ENV_PREFIX + suffix} overrides {key}")
                self.set(key, value)

    def apply_overrides(self, overrides: Mapping[str, Any]):
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)

    def validate(self) -> ExperimentConfig:
        return validate_config(self.config, self.config_file)


def _number(raw: Dict, field: str, kind=float, minimum=None, exclusive: bool = False):
    value = _lookup(raw, field)
    try:
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        number = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(field, f"expected {kind.__name__}, got {value!r}") from None
    if minimum is not None and (number < minimum or (exclusive and number == minimum)):
        relation = '>' if exclusive else '>='
        raise ConfigError(field, f"must be {relation} {minimum}, got {number}")
    return number


def _lookup(raw: Dict, field: str):
    node = raw
    for part in field.split('.'):
        node = node[part]
    return node


def _terms(raw: Dict, field: str) -> Tuple[Dict, ...]:
    entries = _lookup(raw, field)
    if not isinstance(entries, list):
        raise ConfigError(field, "expected an array of term tables")
    for index, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"{field}[{index}]", "expected a table")
        if entry.get('kind', 'const') not in ('const', 'cos', 'sin'):
            raise ConfigError(f"{field}[{index}].kind", f"unknown term kind {entry.get('kind')!r}")
    return tuple(dict(entry) for entry in entries)


def _sweep_lists(raw: Dict, experiment: str) -> Tuple[Tuple[float, ...], Tuple[int, ...]]:
    sweep = raw['sweep']
    if sweep.get('h_list') is not None:
        if not isinstance(sweep['h_list'], list):
            raise ConfigError('sweep.h_list', "expected an array of step sizes")
        h_list = tuple(float(h) for h in sweep['h_list'])
        if any(h <= 0 for h in h_list):
            raise ConfigError('sweep.h_list', "step sizes must be positive")
    else:
        k_min = _number(raw, 'sweep.k_min', int, 0)
        k_max = _number(raw, 'sweep.k_max', int, k_min)
        h_list = tuple(2.0 ** -k for k in range(k_min, k_max + 1))
    N_raw = sweep.get('N_list')
    if N_raw is None:
        N_list = (2, 4, 8, 16, 32)
    else:
        if not isinstance(N_raw, list):
            raise ConfigError('sweep.N_list', "expected an array of step counts")
        N_list = tuple(int(n) for n in N_raw)
        if any(n < 1 for n in N_list):
            raise ConfigError('sweep.N_list', "step counts must be >= 1")
    if experiment in RATE_FIT_EXPERIMENTS:
        uses_n = experiment.startswith('convergence')
        length = len(N_list) if uses_n else len(h_list)
        if length < MIN_SWEEP_POINTS:
            field = 'sweep.N_list' if uses_n else 'sweep.h_list'
            raise ConfigError(field, f"a rate fit needs at least {MIN_SWEEP_POINTS} points, got {length}")
    return h_list, N_list


METRIC_PROFILES = ('power', 'dyadic')


def _check_metric(manifold: 'ManifoldSpec', T: float):
    """The curved metric must stay positive on [0, T] for either time profile."""
    if manifold.profile not in METRIC_PROFILES:
        raise ConfigError('manifold.profile', f"must be one of {', '.join(METRIC_PROFILES)}, got {manifold.profile!r}")
    if manifold.profile == 'power':
        if manifold.amplitude + abs(manifold.increment) * T ** manifold.alpha >= 1:
            raise ConfigError('manifold.amplitude', "metric would not stay positive on [0, T]")
        return
    if manifold.amplitude >= 1:
        raise ConfigError('manifold.amplitude', "metric would not stay positive on [0, T]")
    if not 0 < manifold.alpha < 1:
        raise ConfigError('manifold.alpha', f"a dyadic rate needs 0 < alpha < 1, got {manifold.alpha}")
    try:
        DyadicProfile(manifold.alpha, manifold.increment)
    except ValueError as e:
        raise ConfigError('manifold.increment', str(e)) from None


def validate_config(raw: Dict, source: Optional[Path] = None) -> ExperimentConfig:
    """Checks a merged configuration dict; every error names its dotted field path."""
    experiment = raw.get('experiment')
    if experiment not in EXPERIMENTS:
        raise ConfigError('experiment', f"expected one of {', '.join(EXPERIMENTS)}, got {experiment!r}")
    for section in ('grid', 'symbol', 'sweep', 'output', 'manifold', 'pullback', 'oracle', 'bands'):
        if not isinstance(raw.get(section), dict):
            raise ConfigError(section, "expected a table")
        unknown = sorted(set(raw[section]) - set(DEFAULTS[section]))
        if unknown:
            raise ConfigError(f"{section}.{unknown[0]}", "unknown key")

    grid = GridSpec(_number(raw, 'grid.n', int, 1), _number(raw, 'grid.N', int, 2),
                    _number(raw, 'grid.L', float, 0.0, exclusive=True))
    if grid.n > 2:
        raise ConfigError('grid.n', "only dimensions 1 and 2 are supported")
    if grid.N % 2:
        raise ConfigError('grid.N', f"grid size must be even, got {grid.N}")

    preset = raw['symbol'].get('preset')
    symbol = SymbolSpec(preset if preset else None,
                        _terms(raw, 'symbol.principal'), _terms(raw, 'symbol.lower'),
                        _terms(raw, 'symbol.principal_increment'), _terms(raw, 'symbol.lower_increment'),
                        _number(raw, 'symbol.alpha', float, 0.0, exclusive=True),
                        _number(raw, 'symbol.ellipticity', float, 0.0))
    if symbol.alpha > 1:
        raise ConfigError('symbol.alpha', f"Hoelder exponent must lie in (0, 1], got {symbol.alpha}")
    if symbol.preset is None and not (symbol.principal or symbol.lower):
        raise ConfigError('symbol', "give a preset or principal/lower terms")

    h_list, N_list = _sweep_lists(raw, experiment)
    r = _number(raw, 'sweep.r', float, 0.0)
    if r >= 1:
        raise ConfigError('sweep.r', f"must lie in [0, 1), got {r}")
    resolve_tol = raw['sweep'].get('resolve_tol')
    sweep = SweepSpec(h_list, N_list, _number(raw, 'sweep.t', float, 0.0),
                      _number(raw, 'sweep.T', float, 0.0, exclusive=True), _number(raw, 'sweep.s'), r,
                      _number(raw, 'sweep.tol', float, 1e-11),
                      None if resolve_tol in (None, 0, False) else _number(raw, 'sweep.resolve_tol', float, 0.0,
                                                                            exclusive=True))

    fmt = str(raw['output'].get('format', 'both'))
    if fmt not in FORMATS:
        raise ConfigError('output.format', f"expected one of {', '.join(FORMATS)}, got {fmt!r}")
    output = OutputSpec(Path(str(raw['output'].get('path', 'results'))), fmt)

    manifold = ManifoldSpec(_number(raw, 'manifold.charts', int, 1), _number(raw, 'manifold.overlap', float, 1.0, True),
                            _number(raw, 'manifold.warp'), _number(raw, 'manifold.scale', float, 0.0, True),
                            _number(raw, 'manifold.amplitude', float, 0.0), _number(raw, 'manifold.increment'),
                            _number(raw, 'manifold.alpha', float, 0.0, True), str(_lookup(raw, 'manifold.profile')))
    if abs(manifold.warp) >= 1:
        raise ConfigError('manifold.warp', f"|warp| must be < 1, got {manifold.warp}")
    _check_metric(manifold, sweep.T)

    kinds = raw['pullback'].get('kinds', [])
    if not isinstance(kinds, list) or not kinds:
        raise ConfigError('pullback.kinds', "expected a non-empty array")
    for index, kind in enumerate(kinds):
        if kind not in ('identity', 'affine', 'generic'):
            raise ConfigError(f"pullback.kinds[{index}]", f"unknown transition map {kind!r}")
    pullback = PullbackSpec(tuple(kinds), _number(raw, 'pullback.slope'),
                            _number(raw, 'pullback.amplitude', float, 0.0))
    if pullback.slope == 0:
        raise ConfigError('pullback.slope', "must be nonzero")
    if pullback.amplitude >= 1:
        raise ConfigError('pullback.amplitude', f"must be < 1, got {pullback.amplitude}")

    oracle = OracleSpec(_number(raw, 'oracle.count', int, 1), _number(raw, 'oracle.N_2d', int, 2),
                        _number(raw, 'oracle.tolerance', float, 0.0, True))
    bands = BandSpec(*(_number(raw, f"bands.{field}", float, 0.0) for field in BandSpec._fields))

    try:
        seed = int(raw.get('seed', 0))
    except (TypeError, ValueError):
        raise ConfigError('seed', f"expected an integer, got {raw.get('seed')!r}") from None
    if seed < 0:
        raise ConfigError('seed', "must be nonnegative")

    return ExperimentConfig(experiment, str(raw.get('name') or experiment), seed, grid, symbol, sweep,
                            output, manifold, pullback, oracle, bands, source)


def load_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """File < environment < explicit overrides (dotted keys), then validation."""
    config = Config(path)
    config.apply_environment(environ)
    config.apply_overrides(overrides or {})
    return config.validate()


def preset_search_paths(environ: Optional[Mapping[str, str]] = None) -> List[Path]:
    """Shipped presets directory plus MULTIPRODUCT_PRESETS entries."""
    environ = os.environ if environ is None else environ
    paths = [Path(__file__).resolve().parent.parent / 'presets']
    extra = environ.get(ENV_PREFIX + 'PRESETS', '')
    paths.extend(Path(entry) for entry in extra.split(os.pathsep) if entry)
    return paths
