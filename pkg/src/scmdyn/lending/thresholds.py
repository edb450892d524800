"""Group threshold policies and the MaxProf / DemPar / EqOpp searches."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import InfeasibleConstraintError, InvalidParamsError, ThresholdClampWarning
from ..interventions import Policy
from .groups import GroupModel
from .model import LendingParams, threshold_equation

CRITERIA = ("MaxProf", "DemPar", "EqOpp", "Manual")
GRID_RESOLUTION = 10_000
TOLERANCE = 1e-4


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-group thresholds ``tau`` with tie-break probability ``gamma``."""

    tau: tuple
    gamma: float = 0.0
    criterion: str = "Manual"
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        if len(self.tau) != 2:
            raise InvalidParamsError("need one threshold per group")
        if self.criterion not in CRITERIA:
            raise InvalidParamsError(f"unknown criterion {self.criterion!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParamsError("gamma must lie in [0, 1]")

    def clamped(self, bounds) -> "ThresholdPolicy":
        """Thresholds moved into ``bounds`` (with a warning when any moves)."""
        lo, hi = bounds
        tau = tuple(min(max(t, lo), hi) for t in self.tau)
        if tau != self.tau:
            warnings.warn(f"thresholds {self.tau} clamped to score bounds {tuple(bounds)}", ThresholdClampWarning,
                          stacklevel=2)
        return ThresholdPolicy(tau, self.gamma, self.criterion, self.info)

    def intervention(self, bounds=None) -> Policy:
        """``do(f_T -> pi_tau)``, keeping whichever score input ``T`` currently reads."""
        pol = self.clamped(bounds) if bounds is not None else self

        def rule(node, old):
            return threshold_equation(old.inputs, pol.tau)

        rule.__name__ = f"threshold{pol.tau}"
        return Policy("T", rule, label=f"{self.criterion}{pol.tau}")


@dataclass(frozen=True)
class _GroupGrid:
    thresholds: np.ndarray  # candidate thresholds, index k grants loans to quantiles above k / K
    rate: np.ndarray
    tpr: np.ndarray
    profit: np.ndarray  # expected per-applicant utility within the group
    gain: np.ndarray  # per-loan expected utility at each quantile midpoint


def _group_grid(group, rho, u_plus, u_minus, k) -> _GroupGrid:
    mids = group.ppf((np.arange(k) + 0.5) / k)
    r = np.clip(rho(mids), 0.0, 1.0)
    gain = u_plus * r + u_minus * (1.0 - r)
    tail = lambda v: np.concatenate([np.cumsum(v[::-1])[::-1], [0.0]]) / k  # noqa: E731
    pos = tail(r)
    thresholds = group.ppf(np.arange(k + 1) / k)
    thresholds[0], thresholds[-1] = group.lo, group.hi
    return _GroupGrid(thresholds, 1.0 - np.arange(k + 1) / k, pos / pos[0] if pos[0] > 0 else pos, tail(gain), gain)


def _range_max(values: np.ndarray):
    """Sparse table answering ``argmax values[lo:hi+1]`` (first index on ties)."""
    n = len(values)
    levels = [np.arange(n)]
    span = 1
    while 2 * span <= n:
        prev = levels[-1]
        a, b = prev[: n - 2 * span + 1], prev[span : n - span + 1]
        levels.append(np.where(values[b] > values[a], b, a))
        span *= 2

    def query(lo, hi):
        length = hi - lo + 1
        lvl = np.floor(np.log2(np.maximum(length, 1))).astype(int)
        out = np.empty(len(lo), dtype=np.int64)
        for j in np.unique(lvl):
            sel = lvl == j
            table = levels[j]
            left = table[lo[sel]]
            right = table[hi[sel] - (1 << j) + 1]
            out[sel] = np.where(values[right] > values[left], right, left)
        return out

    return query


def _constrained(grids, weights, metric: str, tolerance: float):
    g0, g1 = grids
    m0, m1 = getattr(g0, metric), getattr(g1, metric)
    # metrics decrease with k; flip to increasing for searchsorted
    inc1 = -m1
    lo = np.searchsorted(inc1, -(m0 + tolerance), side="left")
    hi = np.searchsorted(inc1, -(m0 - tolerance), side="right") - 1
    ok = lo <= hi
    if not ok.any():
        gap = np.abs(m0[:, None] - m1[None, ::max(1, len(m1) // 1000)])
        i, j = np.unravel_index(np.argmin(gap), gap.shape)
        j *= max(1, len(m1) // 1000)
        raise InfeasibleConstraintError(
            f"no threshold pair equalises {metric} within {tolerance}",
            closest=(float(g0.thresholds[i]), float(g1.thresholds[j]), float(abs(m0[i] - m1[j]))),
        )
    k0 = np.nonzero(ok)[0]
    best1 = _range_max(g1.profit)(lo[ok], hi[ok])
    total = weights[0] * g0.profit[k0] + weights[1] * g1.profit[best1]
    i = int(np.argmax(total))  # first maximiser = lowest group-0 threshold
    return int(k0[i]), int(best1[i]), float(total[i])


def compute_thresholds(criterion: str, groups: GroupModel, params: LendingParams = LendingParams(),
                       grid_resolution: int = GRID_RESOLUTION, tolerance: float = TOLERANCE,
                       rho: Callable | None = None) -> ThresholdPolicy:
    """Thresholds for ``criterion`` by exhaustive search over per-group score quantiles.

    ``MaxProf`` takes, per group, the smallest grid score whose per-loan
    expected utility is non-negative. ``DemPar`` and ``EqOpp`` maximise
    expected profit subject to equal selection rates, respectively equal
    true-positive rates ``P(T=1 | Y=1, A=j)``, within ``tolerance``.
    ``rho(x, a)`` overrides the groups' repayment curves (the scores keep
    their group distributions).
    """
    if criterion not in CRITERIA or criterion == "Manual":
        raise InvalidParamsError(f"cannot compute thresholds for criterion {criterion!r}")
    k = int(grid_resolution)
    if k < 2:
        raise InvalidParamsError("grid_resolution must be >= 2")
    rho = rho or groups.rho
    grids = [
        _group_grid(g, lambda x, j=j: rho(x, np.full(np.shape(x), j)), params.u_plus, params.u_minus, k)
        for j, g in enumerate(groups.groups)
    ]
    weights = groups.weights
    if criterion == "MaxProf":
        tau, idx = [], []
        for j, g in enumerate(groups.groups):
            xs = grids[j].thresholds
            r = np.clip(rho(xs, np.full(xs.shape, j)), 0.0, 1.0)
            ok = params.u_plus * r + params.u_minus * (1.0 - r) >= 0
            i = int(np.argmax(ok)) if ok.any() else k
            idx.append(i)
            tau.append(float(xs[i]))
        total = float(sum(w * grids[j].profit[i] for j, (w, i) in enumerate(zip(weights, idx))))
    else:
        metric = "rate" if criterion == "DemPar" else "tpr"
        i0, i1, total = _constrained(grids, weights, metric, tolerance)
        idx = [i0, i1]
        tau = [float(grids[0].thresholds[i0]), float(grids[1].thresholds[i1])]
    info = {
        "expected_profit": total,
        "selection_rate": tuple(float(grids[j].rate[i]) for j, i in enumerate(idx)),
        "tpr": tuple(float(grids[j].tpr[i]) for j, i in enumerate(idx)),
        "grid_resolution": k,
        "tolerance": tolerance,
    }
    return ThresholdPolicy(tuple(tau), params.gamma, criterion, info)
