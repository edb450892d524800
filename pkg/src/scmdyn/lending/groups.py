"""Per-group score distributions and repayment curves."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

from ..errors import DensityUnavailableWarning, InvalidParamsError

SCORE_BOUNDS = (300.0, 850.0)
GROUP_NAMES = ("Black", "White")


class ScoreGroup:
    """Score distribution (cdf / ppf / pdf) and repayment curve ``rho`` of one group."""

    lo: float
    hi: float

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def rho(self, x):
        raise NotImplementedError


@dataclass(frozen=True)
class BetaScoreGroup(ScoreGroup):
    """Beta(a, b) rescaled to ``[lo, hi]`` with ``rho(x) = logistic((x - center) / scale)``."""

    a: float
    b: float
    center: float
    scale: float
    lo: float = SCORE_BOUNDS[0]
    hi: float = SCORE_BOUNDS[1]

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.scale > 0 and self.lo < self.hi):
            raise InvalidParamsError(f"bad BetaScoreGroup parameters: {self}")

    @property
    def width(self):
        return self.hi - self.lo

    def cdf(self, x):
        return special.betainc(self.a, self.b, np.clip((np.asarray(x, np.float64) - self.lo) / self.width, 0.0, 1.0))

    def ppf(self, u):
        return self.lo + self.width * special.betaincinv(self.a, self.b, np.asarray(u, np.float64))

    def pdf(self, x):
        return stats.beta.pdf((np.asarray(x, np.float64) - self.lo) / self.width, self.a, self.b) / self.width

    def rho(self, x):
        return special.expit((np.asarray(x, np.float64) - self.center) / self.scale)


@dataclass(frozen=True, eq=False)
class TabulatedScoreGroup(ScoreGroup):
    """Piecewise-linear CDF and repayment curve through tabulated points."""

    scores: np.ndarray
    cdf_values: np.ndarray
    rho_values: np.ndarray

    def __post_init__(self):
        s, c, r = (np.asarray(v, np.float64) for v in (self.scores, self.cdf_values, self.rho_values))
        if not (s.ndim == 1 and len(s) >= 2 and c.shape == s.shape and r.shape == s.shape):
            raise InvalidParamsError("tabulated curves need matching 1-d columns with at least two rows")
        if np.any(np.diff(s) <= 0):
            raise InvalidParamsError("tabulated scores must be strictly increasing")
        if np.any(np.diff(c) < 0) or not (np.isclose(c[0], 0.0) and np.isclose(c[-1], 1.0)):
            raise InvalidParamsError("tabulated cdf must be nondecreasing from 0 to 1")
        if np.any(np.diff(r) < 0) or r.min() < 0 or r.max() > 1:
            raise InvalidParamsError("tabulated rho must be nondecreasing within [0, 1]")
        c = c.copy()
        c[0], c[-1] = 0.0, 1.0
        for name, v in (("scores", s), ("cdf_values", c), ("rho_values", r)):
            object.__setattr__(self, name, v)

    @property
    def lo(self):
        return float(self.scores[0])

    @property
    def hi(self):
        return float(self.scores[-1])

    def fingerprint(self):
        return "tab:" + ",".join(f"{v:.17g}" for v in np.concatenate([self.scores, self.cdf_values, self.rho_values]))

    def cdf(self, x):
        return np.interp(x, self.scores, self.cdf_values)

    def ppf(self, u):
        # flat cdf stretches carry no mass; keep the left end of each
        c, keep = np.unique(self.cdf_values, return_index=True)
        s = self.scores[keep]
        last = np.searchsorted(self.cdf_values, 1.0)
        s[-1] = self.scores[min(last, len(self.scores) - 1)]
        return np.interp(u, c, s)

    def pdf(self, x):
        warnings.warn("tabulated group: density from finite differences of the cdf", DensityUnavailableWarning, stacklevel=2)
        slopes = np.diff(self.cdf_values) / np.diff(self.scores)
        idx = np.clip(np.searchsorted(self.scores, x, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def rho(self, x):
        return np.interp(x, self.scores, self.rho_values)


def _pick(a, values):
    a = np.asarray(a)
    out = values[0]
    for j in range(1, len(values)):
        out = np.where(a == j, values[j], out)
    return out


@dataclass(frozen=True)
class GroupModel:
    """Two groups with membership ``P(A = 1) = theta``."""

    groups: tuple
    theta: float = 0.5
    names: tuple = GROUP_NAMES

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if len(self.groups) != 2:
            raise InvalidParamsError("GroupModel needs exactly two groups")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidParamsError(f"theta must lie in [0, 1], got {self.theta}")
        if len(self.names) != len(self.groups):
            raise InvalidParamsError("one name per group required")

    @property
    def weights(self) -> np.ndarray:
        return np.array([1.0 - self.theta, self.theta])

    @property
    def bounds(self) -> tuple:
        return (min(g.lo for g in self.groups), max(g.hi for g in self.groups))

    def ppf(self, u, a):
        return _pick(a, [g.ppf(u) for g in self.groups])

    def cdf(self, x, a):
        return _pick(a, [g.cdf(x) for g in self.groups])

    def rho(self, x, a):
        return _pick(a, [g.rho(x) for g in self.groups])

    def posterior_group(self, x) -> np.ndarray:
        """``P(A = j | X = x)`` by Bayes' rule, shape ``x.shape + (2,)``."""
        dens = np.stack([w * g.pdf(x) for w, g in zip(self.weights, self.groups)], axis=-1)
        total = dens.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = np.where(total > 0, dens / np.where(total > 0, total, 1.0), self.weights)
        return post

    def marginal_rho(self, x) -> np.ndarray:
        """``rho_bar(x) = sum_j P(A = j | x) rho(x, j)``."""
        x = np.asarray(x, np.float64)
        post = self.posterior_group(x)
        return sum(post[..., j] * g.rho(x) for j, g in enumerate(self.groups))

    def check(self, grid: int = 2001) -> None:
        """Verify monotone cdf/rho and the cdf/ppf round trip on each group."""
        for j, g in enumerate(self.groups):
            xs = np.linspace(g.lo, g.hi, grid)
            if np.any(np.diff(g.cdf(xs)) < -1e-12) or np.any(np.diff(g.rho(xs)) < -1e-12):
                raise InvalidParamsError(f"group {j}: cdf and rho must be nondecreasing")
            us = np.linspace(0.001, 0.999, 999)
            if np.max(np.abs(g.cdf(g.ppf(us)) - us)) > 1e-9:
                raise InvalidParamsError(f"group {j}: cdf(ppf(u)) != u")


def default_groups(theta: float = 0.5, centers: Sequence[float] = (560.0, 540.0), scale: float = 40.0) -> GroupModel:
    """Synthetic two-group model: Beta(4, 4) / Beta(6, 3) scores on [300, 850]."""
    return GroupModel(
        (BetaScoreGroup(4.0, 4.0, centers[0], scale), BetaScoreGroup(6.0, 3.0, centers[1], scale)), theta
    )


def load_tabulated_groups(path, theta: float = 0.5, names: Sequence[str] = GROUP_NAMES) -> GroupModel:
    """Read ``group,score,cdf,rho`` rows (``group`` is 0/1 or a group name) into a :class:`GroupModel`."""
    rows = {0: [], 1: []}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"group", "score", "cdf", "rho"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidParamsError(f"{path}: missing columns {sorted(missing)}")
        for lineno, rec in enumerate(reader, 2):
            g = rec["group"].strip()
            j = names.index(g) if g in names else int(g) if g.isdigit() else -1
            if j not in rows:
                raise InvalidParamsError(f"{path}:{lineno}: unknown group {g!r}")
            try:
                rows[j].append((float(rec["score"]), float(rec["cdf"]), float(rec["rho"])))
            except ValueError as exc:
                raise InvalidParamsError(f"{path}:{lineno}: {exc}") from exc
    groups = []
    for j in (0, 1):
        if not rows[j]:
            raise InvalidParamsError(f"{path}: no rows for group {names[j]!r}")
        arr = np.array(sorted(rows[j]))
        if not all(math.isfinite(v) for v in arr.ravel()):
            raise InvalidParamsError(f"{path}: non-finite values")
        groups.append(TabulatedScoreGroup(arr[:, 0], arr[:, 1], arr[:, 2]))
    return GroupModel(tuple(groups), theta, tuple(names))
