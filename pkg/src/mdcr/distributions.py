"""Standardized non-Gaussian error laws used for latent noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

EULER_GAMMA = 0.5772156649015329


class Family(str, Enum):
    BETA = "Beta"
    CHISQUARE = "ChiSquare"
    GUMBEL = "Gumbel"
    LOGNORMAL = "LogNormal"
    WEIBULL = "Weibull"
    EXPONENTIAL = "Exponential"
    SKEWNORMAL = "SkewNormal"


# Parameter names per family, in the order used by ``ErrorSpec.params``.
PARAM_NAMES = {
    Family.BETA: ("a", "b"),
    Family.CHISQUARE: ("df",),
    Family.GUMBEL: ("loc", "scale"),
    Family.LOGNORMAL: ("mu", "sigma"),
    Family.WEIBULL: ("scale", "shape"),
    Family.EXPONENTIAL: ("rate",),
    Family.SKEWNORMAL: ("alpha",),
}


@dataclass(frozen=True)
class ErrorSpec:
    """A distribution family plus raw parameters; samples are always standardized.

    Weibull takes ``(scale, shape)`` and Exponential a rate, so ``Weibull(1, 2)``
    has shape 2 and ``Exponential(0.1)`` has mean 10.
    """

    family: Family
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        names = PARAM_NAMES[self.family]
        if len(self.params) != len(names):
            raise ValueError(f"{self.family.value} expects parameters {names}, got {self.params}")
        positive = {
            Family.BETA: self.params,
            Family.CHISQUARE: self.params,
            Family.GUMBEL: self.params[1:],
            Family.LOGNORMAL: self.params[1:],
            Family.WEIBULL: self.params,
            Family.EXPONENTIAL: self.params,
            Family.SKEWNORMAL: (),
        }[self.family]
        if any(not p > 0 for p in positive):
            raise ValueError(f"invalid parameters for {self.family.value}: {self.params}")

    @property
    def key(self) -> str:
        """Identity of the *standardized* law (location/scale parameters dropped)."""
        f, p = self.family, self.params
        if f in (Family.GUMBEL, Family.EXPONENTIAL):
            shape = ()
        elif f is Family.LOGNORMAL:
            shape = (p[1],)
        elif f is Family.WEIBULL:
            shape = (p[1],)
        else:
            shape = p
        return f"{f.value}({','.join(f'{x:g}' for x in shape)})"

    def __str__(self) -> str:
        return f"{self.family.value}({', '.join(f'{x:g}' for x in self.params)})"

    def mean(self) -> float:
        return raw_moments(self)[0]

    def var(self) -> float:
        return raw_moments(self)[1]

    def to_dict(self) -> dict:
        return {"family": self.family.value, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorSpec":
        return cls(Family(d["family"]), tuple(d["params"]))


def raw_moments(spec: ErrorSpec) -> tuple[float, float]:
    """Population mean and variance of the unstandardized law."""
    p = spec.params
    match spec.family:
        case Family.BETA:
            a, b = p
            return a / (a + b), a * b / ((a + b) ** 2 * (a + b + 1))
        case Family.CHISQUARE:
            return p[0], 2 * p[0]
        case Family.GUMBEL:
            loc, scale = p
            return loc + scale * EULER_GAMMA, math.pi**2 * scale**2 / 6
        case Family.LOGNORMAL:
            mu, s = p
            return math.exp(mu + s**2 / 2), math.expm1(s**2) * math.exp(2 * mu + s**2)
        case Family.WEIBULL:
            lam, k = p
            g1 = math.gamma(1 + 1 / k)
            return lam * g1, lam**2 * (math.gamma(1 + 2 / k) - g1**2)
        case Family.EXPONENTIAL:
            return 1 / p[0], 1 / p[0] ** 2
        case Family.SKEWNORMAL:
            delta = p[0] / math.sqrt(1 + p[0] ** 2)
            return delta * math.sqrt(2 / math.pi), 1 - 2 * delta**2 / math.pi
    raise ValueError(spec.family)


def raw_sample(spec: ErrorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    p = spec.params
    match spec.family:
        case Family.BETA:
            return rng.beta(p[0], p[1], size=n)
        case Family.CHISQUARE:
            return rng.chisquare(p[0], size=n)
        case Family.GUMBEL:
            return rng.gumbel(p[0], p[1], size=n)
        case Family.LOGNORMAL:
            return rng.lognormal(p[0], p[1], size=n)
        case Family.WEIBULL:
            return p[0] * rng.weibull(p[1], size=n)
        case Family.EXPONENTIAL:
            return rng.exponential(1 / p[0], size=n)
        case Family.SKEWNORMAL:
            # location 0, scale 1 skew-normal via its half-normal representation
            delta = p[0] / math.sqrt(1 + p[0] ** 2)
            u0, u1 = rng.standard_normal((2, n))
            return delta * np.abs(u0) + math.sqrt(1 - delta**2) * u1
    raise ValueError(spec.family)


def standardized_sample(spec: ErrorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws shifted and scaled by the exact population mean and sd."""
    if n < 1:
        raise ValueError("n must be at least 1")
    mu, var = raw_moments(spec)
    return (raw_sample(spec, n, rng) - mu) / math.sqrt(var)


def _spec(family: Family, *params: float) -> ErrorSpec:
    return ErrorSpec(family, params)


# Latent noise laws by latent index (L first, then the I_e blocks).
DEFAULT_TABLE: tuple[ErrorSpec, ...] = (
    _spec(Family.BETA, 2, 3),
    _spec(Family.BETA, 2, 5),
    _spec(Family.CHISQUARE, 4),
    _spec(Family.GUMBEL, 0, 1),
    _spec(Family.LOGNORMAL, 0, 1),
    _spec(Family.WEIBULL, 1, 2),
    _spec(Family.EXPONENTIAL, 0.1),
    _spec(Family.SKEWNORMAL, 6),
    _spec(Family.SKEWNORMAL, 12),
)

# Violates pairwise distinctness: every I_e repeats one shared law and all
# domains carry a LogNormal(0, 1) latent. Laid out for ell = 3, |I_e| = 2.
DUPLICATE_TABLE: tuple[ErrorSpec, ...] = (
    _spec(Family.BETA, 2, 3),
    _spec(Family.BETA, 2, 5),
    _spec(Family.CHISQUARE, 4),
    _spec(Family.BETA, 2, 3),
    _spec(Family.LOGNORMAL, 0, 1),
    _spec(Family.BETA, 2, 5),
    _spec(Family.LOGNORMAL, 0, 1),
    _spec(Family.CHISQUARE, 4),
    _spec(Family.LOGNORMAL, 0, 1),
)


def extension_spec(t: int) -> ErrorSpec:
    """The ``t``-th law past the default table.

    Skewed families with shape parameters that never repeat a standardized law
    from the table or from another extension index.
    """
    r, q = divmod(t, 4)
    match q:
        case 0:
            return _spec(Family.BETA, 2, 7 + 2 * r)
        case 1:
            return _spec(Family.CHISQUARE, 8 + 4 * r)
        case 2:
            return _spec(Family.LOGNORMAL, 0, 0.5 / (r + 1))
        case _:
            return _spec(Family.WEIBULL, 1, 1.5 - 0.5 * r / (r + 1))


def default_error_specs(h: int, table: tuple[ErrorSpec, ...] = DEFAULT_TABLE) -> tuple[ErrorSpec, ...]:
    return tuple(table[i] if i < len(table) else extension_spec(i - len(table)) for i in range(h))
