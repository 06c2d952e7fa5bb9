# core/symbol_presets.py

"""Named symbol families used by the shipped experiments."""
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from core.symbols import (DyadicProfile, EllipticityCertificate, SymbolFunction, SymbolTerm, multiplication_symbol,
                          separable_symbol, trig_polynomial_symbol)

TWO_PI = 2 * np.pi


class SymbolPreset(NamedTuple):
    name: str
    dim: int
    description: str
    build: Callable[[float], SymbolFunction]


def _heat(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol([SymbolTerm(1.0, power=(2,))], box_length=box_length,
                                  ellipticity=EllipticityCertificate(1.0), name='heat')


def _heat_drift(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol([SymbolTerm(1.0, power=(2,))], [SymbolTerm(1j, power=(1,))],
                                  box_length=box_length, ellipticity=EllipticityCertificate(1.0),
                                  name='heat-drift')


CURVED_PRINCIPAL = [SymbolTerm(1.0, power=(2,)), SymbolTerm(0.5, 'cos', (1,), (2,))]
CURVED_LOWER = [SymbolTerm(1j, 'sin', (1,), (1,))]
HOLDER_PRINCIPAL = [SymbolTerm(0.5, power=(2,)), SymbolTerm(0.25, 'sin', (1,), (2,))]
HOLDER_LOWER = [SymbolTerm(0.5j, 'cos', (1,), (1,))]


def _curved_1d(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol(CURVED_PRINCIPAL, CURVED_LOWER, box_length=box_length,
                                  ellipticity=EllipticityCertificate(0.5), name='curved-1d')


def _holder(alpha: float, name: str) -> Callable[[float], SymbolFunction]:
    def build(box_length: float) -> SymbolFunction:
        return trig_polynomial_symbol(CURVED_PRINCIPAL, CURVED_LOWER, box_length=box_length,
                                      principal_increment=HOLDER_PRINCIPAL, lower_increment=HOLDER_LOWER,
                                      alpha=alpha, ellipticity=EllipticityCertificate(0.5), name=name)
    return build


def _holder_rough(alpha: float, name: str) -> Callable[[float], SymbolFunction]:
    def build(box_length: float) -> SymbolFunction:
        return separable_symbol(_curved_1d(box_length), DyadicProfile(alpha), name)
    return build


def _heat_linear_time(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol([SymbolTerm(1.0, power=(2,))], box_length=box_length,
                                  principal_increment=[SymbolTerm(1.0, power=(2,))], alpha=1.0,
                                  ellipticity=EllipticityCertificate(1.0), name='heat-linear-time')


def _zero(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol([], box_length=box_length,
                                  ellipticity=EllipticityCertificate(0.0), name='zero')


def _heat_2d(box_length: float) -> SymbolFunction:
    return trig_polynomial_symbol([SymbolTerm(1.0, power=(2, 0)), SymbolTerm(1.0, power=(0, 2))],
                                  box_length=box_length, dim=2,
                                  ellipticity=EllipticityCertificate(1.0), name='heat-2d')


def _curved_2d(box_length: float) -> SymbolFunction:
    principal = [SymbolTerm(1.0, power=(2, 0)), SymbolTerm(0.25, 'cos', (1, 0), (2, 0)),
                 SymbolTerm(1.0, power=(0, 2)), SymbolTerm(0.25, 'cos', (0, 1), (0, 2))]
    lower = [SymbolTerm(1j, 'sin', (0, 1), (1, 0))]
    return trig_polynomial_symbol(principal, lower, box_length=box_length, dim=2,
                                  ellipticity=EllipticityCertificate(0.75), name='curved-2d')


PRESETS: Dict[str, SymbolPreset] = {
    preset.name: preset for preset in (
        SymbolPreset('heat', 1, 'xi^2', _heat),
        SymbolPreset('heat-drift', 1, 'xi^2 + i xi', _heat_drift),
        SymbolPreset('curved-1d', 1, '(1 + cos(x)/2) xi^2 + i xi sin(x)', _curved_1d),
        SymbolPreset('holder-half', 1, 'curved-1d + t^(1/2) ((1/2 + sin(x)/4) xi^2 + (i/2) xi cos(x))',
                     _holder(0.5, 'holder-half')),
        SymbolPreset('holder-half-rough', 1, 'c(t) curved-1d, c a dyadic Weierstrass sum of exponent 1/2',
                     _holder_rough(0.5, 'holder-half-rough')),
        SymbolPreset('holder-one', 1, 'curved-1d + t ((1/2 + sin(x)/4) xi^2 + (i/2) xi cos(x))',
                     _holder(1.0, 'holder-one')),
        SymbolPreset('heat-linear-time', 1, '(1 + t) xi^2', _heat_linear_time),
        SymbolPreset('zero', 1, '0 (identity steps)', _zero),
        SymbolPreset('heat-2d', 2, '|xi|^2', _heat_2d),
        SymbolPreset('curved-2d', 2, '(1 + cos(x1)/4) xi1^2 + (1 + cos(x2)/4) xi2^2 + i xi1 sin(x2)', _curved_2d),
    )
}


def get_preset(name: str, box_length: float = TWO_PI) -> SymbolFunction:
    try:
        preset = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown symbol preset {name!r}; known: {sorted(PRESETS)}") from None
    return preset.build(box_length)


def terms_from_spec(entries: Sequence[Dict], dim: int) -> List[SymbolTerm]:
    """SymbolTerms from config tables {coefficient | re/im, kind, mode, power}."""
    terms = []
    for entry in entries:
        if 'coefficient' in entry:
            coefficient = complex(entry['coefficient'])
        else:
            coefficient = complex(float(entry.get('re', 0.0)), float(entry.get('im', 0.0)))
        terms.append(SymbolTerm(coefficient, entry.get('kind', 'const'),
                                tuple(entry.get('mode', (0,) * dim)), tuple(entry.get('power', (0,) * dim))))
    return terms


def random_trig_symbol(rng: np.random.Generator, dim: int = 1, box_length: float = TWO_PI,
                       max_mode: int = 3, max_power: int = 2, count: int = 6,
                       name: Optional[str] = None) -> SymbolFunction:
    """Random complex trig-polynomial symbol (no ellipticity certificate)."""
    terms = []
    for _ in range(count):
        kind = str(rng.choice(['const', 'cos', 'sin']))
        mode = tuple(int(m) for m in rng.integers(0, max_mode + 1, size=dim))
        power = tuple(int(p) for p in rng.integers(0, max_power + 1, size=dim))
        coefficient = complex(rng.standard_normal(), rng.standard_normal())
        terms.append(SymbolTerm(coefficient, kind, mode, power))
    return trig_polynomial_symbol([], terms, box_length=box_length, dim=dim, name=name or 'random-trig')


def smooth_cutoff(box_length: float = TWO_PI) -> SymbolFunction:
    """phi(x) = 0.6 + 0.4 cos(2 pi x / L)."""
    k = TWO_PI / box_length
    return multiplication_symbol(lambda x: 0.6 + 0.4 * np.cos(k * x[0]),
                                 lambda x, axis: -0.4 * k * np.sin(k * x[0]), name='cutoff')


def smooth_density(box_length: float = TWO_PI) -> SymbolFunction:
    """f(x) = 1 + 0.5 sin(2 pi x / L)."""
    k = TWO_PI / box_length
    return multiplication_symbol(lambda x: 1.0 + 0.5 * np.sin(k * x[0]),
                                 lambda x, axis: 0.5 * k * np.cos(k * x[0]), name='density')
