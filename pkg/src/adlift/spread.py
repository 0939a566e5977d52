"""Generalized-gamma spread functions.

The continuous spread function is the density of the delay between the end
of an ad and a visit it caused.  Its per-minute discretization ``V_s(t)`` is
the share of an ad's visits that land in minute ``t`` for an ad ending at
offset ``s``; with a cut-off ``d`` the shares over ``(s, s + d]`` sum to one.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum

import numpy as np

from adlift.errors import DomainError
from adlift.special import reg_inc_gamma_q

DEFAULT_CUTOFF = 30


class SpreadFamily(str, Enum):
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"
    GAMMA = "gamma"
    GENGAMMA = "gengamma"

    @property
    def free_params(self) -> tuple[str, ...]:
        return _FREE[self]

    @property
    def n_free(self) -> int:
        return len(_FREE[self])


_FREE = {
    SpreadFamily.EXPONENTIAL: ("alpha",),
    SpreadFamily.WEIBULL: ("alpha", "phi"),
    SpreadFamily.GAMMA: ("alpha", "psi"),
    SpreadFamily.GENGAMMA: ("alpha", "phi", "psi"),
}


@dataclass(frozen=True)
class SpreadSpec:
    """A member of the generalized gamma family plus an optional cut-off.

    ``alpha`` is the scale (per minute), ``phi`` and ``psi`` the shapes.
    Special families pin the shapes: exponential has ``phi = psi = 1``,
    Weibull ``psi = 1`` and gamma ``phi = 1``.
    """

    family: SpreadFamily
    alpha: float
    phi: float = 1.0
    psi: float = 1.0
    cutoff: int | None = DEFAULT_CUTOFF

    def __post_init__(self):
        object.__setattr__(self, "family", SpreadFamily(self.family))
        for name in ("alpha", "phi", "psi"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)
        fam = self.family
        if fam in (SpreadFamily.EXPONENTIAL, SpreadFamily.GAMMA) and self.phi != 1.0:
            raise DomainError(f"{fam.value} spread requires phi = 1")
        if fam in (SpreadFamily.EXPONENTIAL, SpreadFamily.WEIBULL) and self.psi != 1.0:
            raise DomainError(f"{fam.value} spread requires psi = 1")
        if self.cutoff is not None:
            if int(self.cutoff) != self.cutoff or self.cutoff < 1:
                raise DomainError("cutoff must be a positive integer")
            object.__setattr__(self, "cutoff", int(self.cutoff))

    @classmethod
    def initial(cls, family, cutoff: int | None = DEFAULT_CUTOFF) -> "SpreadSpec":
        return cls(SpreadFamily(family), 0.2, 1.0, 1.0, cutoff)

    def free_vector(self) -> np.ndarray:
        return np.array([getattr(self, p) for p in self.family.free_params])

    def with_free(self, values) -> "SpreadSpec":
        return replace(self, **dict(zip(self.family.free_params, map(float, values))))

    def recast(self, family) -> "SpreadSpec":
        """Nearest member of ``family``: shapes the family pins reset to 1."""
        family = SpreadFamily(family)
        phi = self.phi if "phi" in family.free_params else 1.0
        psi = self.psi if "psi" in family.free_params else 1.0
        return SpreadSpec(family, self.alpha, phi, psi, self.cutoff)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SpreadSpec":
        return cls(d["family"], d["alpha"], d.get("phi", 1.0), d.get("psi", 1.0), d.get("cutoff"))

    @classmethod
    def from_json(cls, text: str) -> "SpreadSpec":
        return cls.from_dict(json.loads(text))


def density(spec: SpreadSpec, tau):
    """Generalized gamma density ``f(tau)`` for ``tau > 0``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("spread density is defined for tau > 0")
    a, phi, psi = spec.alpha, spec.phi, spec.psi
    x = tau * a
    logf = math.log(a * phi) - math.lgamma(psi) + (psi * phi - 1.0) * np.log(x) - x**phi
    out = np.exp(logf)
    return out[()] if out.ndim == 0 else out


def spread_integral(spec: SpreadSpec, lo, hi):
    """Mass of the continuous spread function on ``[lo, hi]``, ``0 <= lo <= hi``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    return reg_inc_gamma_q(spec.psi, (lo * spec.alpha) ** spec.phi, (hi * spec.alpha) ** spec.phi)


def spread_mean(spec: SpreadSpec) -> float:
    """Mean delay between the end of an ad and a visit it caused."""
    return math.exp(math.lgamma(spec.psi + 1.0 / spec.phi) - math.lgamma(spec.psi)) / spec.alpha


def spread_mode(spec: SpreadSpec) -> float:
    if spec.phi * spec.psi > 1.0:
        return (spec.psi - 1.0 / spec.phi) ** (1.0 / spec.phi) / spec.alpha
    return 0.0


def spread_profile(spec: SpreadSpec, s: float, horizon: int | None = None) -> tuple[int, np.ndarray]:
    """Shares of an ad's visits in consecutive minutes after it ends.

    Returns ``(first, values)`` where ``values[k]`` is ``V_s(first + k)`` and
    ``first = floor(s) + 1`` is the first minute strictly after ``s``.  With a
    cut-off the profile has exactly ``cutoff`` entries; otherwise ``horizon``
    entries (default 200) of the untruncated function.
    """
    floor_s = math.floor(s)
    frac = s - floor_s
    n = spec.cutoff if spec.cutoff is not None else (horizon or 200)
    # minute first + k covers delays (k - frac, k + 1 - frac], clipped at 0
    upper = np.arange(1, n + 1, dtype=float) - frac
    lower = np.maximum(upper - 1.0, 0.0)
    values = spread_integral(spec, lower, upper)
    if spec.cutoff is not None:
        norm = spread_integral(spec, 0.0, spec.cutoff - s + floor_s)
        values = values / norm
    return floor_s + 1, np.asarray(values, dtype=float)


def discretized_spread(spec: SpreadSpec, s: float, t: int) -> float:
    """``V_s(t)``: share of an ad's visits falling in minute ``t``."""
    first, values = spread_profile(spec, s, horizon=max(int(t - math.floor(s)), 1))
    k = int(t) - first
    if k < 0 or k >= values.size:
        return 0.0
    return float(values[k])
