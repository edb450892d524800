"""Exogenous noise priors.

All priors are sampled by the inverse-CDF transform of a single open-unit
uniform per node instance, which keeps one random word per instance and makes
truncated posteriors easy to sample (map the truncation bounds through the CDF
and draw in quantile space).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import special

from .errors import InvalidPriorError


class NoisePrior:
    kind = "real"

    def _coerce(self) -> None:
        # store parameters as floats so Uniform(0, 1) and Uniform(0.0, 1.0) fingerprint alike
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float, np.number)) and not isinstance(value, bool):
                object.__setattr__(self, f.name, float(value))

    def validate(self) -> None:
        raise NotImplementedError

    def ppf(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of values in the prior's support."""
        raise NotImplementedError

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def var(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(NoisePrior):
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        self._coerce()
        self.validate()

    def validate(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.lo < self.hi:
            raise InvalidPriorError(f"Uniform requires finite lo < hi, got ({self.lo}, {self.hi})")

    def ppf(self, u):
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=np.float64)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.lo) & (x <= self.hi)

    @property
    def mean(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def var(self):
        return (self.hi - self.lo) ** 2 / 12.0

    def to_dict(self):
        return {"family": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Bernoulli(NoisePrior):
    p: float = 0.5
    kind = "binary"

    def __post_init__(self):
        self._coerce()
        self.validate()

    def validate(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidPriorError(f"Bernoulli requires 0 <= p <= 1, got {self.p}")

    def ppf(self, u):
        return (np.asarray(u) < self.p).astype(np.int64)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.where(x < 0, 0.0, np.where(x < 1, 1.0 - self.p, 1.0))

    def contains(self, x):
        x = np.asarray(x)
        return (x == 0) | (x == 1)

    @property
    def mean(self):
        return self.p

    @property
    def var(self):
        return self.p * (1.0 - self.p)

    def to_dict(self):
        return {"family": "bernoulli", "p": self.p}


@dataclass(frozen=True)
class Gaussian(NoisePrior):
    mean: float = 0.0
    stddev: float = 1.0

    def __post_init__(self):
        self._coerce()
        self.validate()

    def validate(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.stddev)) or self.stddev < 0:
            raise InvalidPriorError(f"Gaussian requires stddev >= 0, got {self.stddev}")

    def ppf(self, u):
        return self.mean + self.stddev * special.ndtri(np.asarray(u, dtype=np.float64))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.stddev == 0:
            return (x >= self.mean).astype(np.float64)
        return special.ndtr((x - self.mean) / self.stddev)

    def contains(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.stddev == 0:
            return x == self.mean
        return np.isfinite(x)

    @property
    def var(self):
        return self.stddev**2

    def to_dict(self):
        return {"family": "gaussian", "mean": self.mean, "stddev": self.stddev}


def prior_from_dict(spec: dict) -> NoisePrior:
    """Build a prior from its ``to_dict`` form."""
    try:
        family = spec["family"].lower()
        if family == "uniform":
            return Uniform(float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)))
        if family == "bernoulli":
            return Bernoulli(float(spec["p"]))
        if family in ("gaussian", "normal"):
            return Gaussian(float(spec.get("mean", 0.0)), float(spec.get("stddev", 1.0)))
    except (KeyError, TypeError, AttributeError) as exc:
        raise InvalidPriorError(f"malformed prior {spec!r}") from exc
    raise InvalidPriorError(f"unknown prior family {spec.get('family')!r}")
