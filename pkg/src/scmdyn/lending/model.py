"""The lending SCM: one-step and unrolled multi-step feedback."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..equations import Equation, Interval, PointMass, identity, register_equation
from ..errors import InvalidParamsError
from ..graph import ScmGraph, endogenous, exogenous
from ..priors import Bernoulli, Uniform
from .groups import GroupModel, default_groups

UNIT = "unit"
GROUP = "group"


@dataclass(frozen=True)
class LendingParams:
    """Utilities, score changes and simulation sizes.

    ``outcome_offset`` is the cut-off in ``1(logit rho + logit U_Y > offset)``;
    0 makes ``P(Y = 1 | X, A) = rho(X, A)``. ``clamp_scores`` of ``None`` clamps
    updated scores to the bounds only when ``steps > 1``.
    """

    u_plus: float = 1.0
    u_minus: float = -4.0
    c_plus: float = 75.0
    c_minus: float = -150.0
    gamma: float = 0.0
    score_bounds: tuple = (300.0, 850.0)
    n_units: int = 10_000
    steps: int = 1
    outcome_offset: float = 0.0
    clamp_scores: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "score_bounds", tuple(float(b) for b in self.score_bounds))
        if not self.u_minus < 0 < self.u_plus:
            raise InvalidParamsError("need u_minus < 0 < u_plus")
        if not self.c_minus < 0 < self.c_plus:
            raise InvalidParamsError("need c_minus < 0 < c_plus")
        if not 0.0 <= self.gamma <= 1.0:
            raise InvalidParamsError("gamma must lie in [0, 1]")
        lo, hi = self.score_bounds
        if not lo < hi:
            raise InvalidParamsError("score_bounds need lo < hi")
        if int(self.n_units) != self.n_units or self.n_units < 1:
            raise InvalidParamsError("n_units must be a positive integer")
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidParamsError("steps must be >= 1")
        if not math.isfinite(self.outcome_offset):
            raise InvalidParamsError("outcome_offset must be finite")

    @property
    def clamps(self) -> bool:
        return self.steps > 1 if self.clamp_scores is None else bool(self.clamp_scores)

    @property
    def break_even(self) -> float:
        """Repayment probability at which a loan has zero expected utility."""
        return -self.u_minus / (self.u_plus - self.u_minus)


# --- mechanisms ---------------------------------------------------------------


def score_equation(inputs, groups: GroupModel) -> Equation:
    """``X = CDF_A^{-1}(U_X)``; inputs ``(U_X, A)``."""
    noise, group = inputs

    def abduct(output, known):
        a = known.get(group)
        if a is None:
            return {}
        return {noise: PointMass(groups.cdf(output, a))}

    return Equation(inputs, lambda u, a: groups.ppf(u, a), "real", "initial_score", {"groups": groups}, abduct=abduct)


@register_equation("threshold")
def threshold_equation(inputs, tau: Sequence[float]) -> Equation:
    """``T = 1`` above the group threshold, ``U_T`` at it, 0 below; inputs ``(U_T, score, A)``."""
    noise, score, group = inputs
    tau = tuple(float(t) for t in tau)

    def fn(u, x, a):
        t = np.where(np.asarray(a) == 1, tau[1], tau[0])
        return np.where(x > t, 1, np.where(x == t, u, 0)).astype(np.int64)

    def abduct(output, known):
        x, a = known.get(score), known.get(group)
        if x is None or a is None:
            return {}
        tie = x == np.where(np.asarray(a) == 1, tau[1], tau[0])
        return {noise: PointMass(output, where=tie)}

    return Equation(inputs, fn, "binary", "threshold", {"tau": tau}, abduct=abduct)


def outcome_threshold(rho, offset: float):
    """Cut-off ``t`` with ``Y = 1(U_Y > t)`` equivalent to ``logit rho + logit U_Y > offset``."""
    rho = np.clip(np.asarray(rho, np.float64), 0.0, 1.0)
    if offset == 0.0:
        return 1.0 - rho
    return (1.0 - rho) / ((1.0 - rho) + math.exp(-offset) * rho)


def outcome_equation(inputs, rho_fn, offset: float = 0.0, label: str = "rho", params=None) -> Equation:
    """Potential repayment ``Y = 1(U_Y > t(rho(X, A)))``; inputs ``(U_Y, X, A)``."""
    noise, score, group = inputs

    def fn(u, x, a):
        return (u > outcome_threshold(rho_fn(x, a), offset)).astype(np.int64)

    def abduct(output, known):
        x, a = known.get(score), known.get(group)
        if x is None or a is None:
            return {}
        t = outcome_threshold(rho_fn(x, a), offset)
        one = np.asarray(output) == 1
        return {noise: Interval(np.where(one, t, 0.0), np.where(one, 1.0, t), lo_open=one)}

    return Equation(inputs, fn, "binary", "outcome", {"rho": label, "offset": offset, **(params or {})}, abduct=abduct)


def utility_equation(inputs, u_plus: float, u_minus: float) -> Equation:
    """Per-loan utility; 0 without a loan. Inputs ``(Y, T)``."""

    def fn(y, t):
        return np.where(t == 1, np.where(y == 1, u_plus, u_minus), 0.0)

    return Equation(inputs, fn, "real", "loan_utility", {"u_plus": u_plus, "u_minus": u_minus})


def update_equation(inputs, c_plus: float, c_minus: float, bounds=None) -> Equation:
    """``X' = X + c(Y)`` when a loan is made, else ``X``; optionally clamped. Inputs ``(X, Y, T)``."""

    def fn(x, y, t):
        out = np.where(t == 1, x + np.where(y == 1, c_plus, c_minus), x)
        return out if bounds is None else np.clip(out, bounds[0], bounds[1])

    params = {"c_plus": c_plus, "c_minus": c_minus, "bounds": None if bounds is None else tuple(bounds)}
    return Equation(inputs, fn, "real", "score_update", params)


def profit_equation(inputs) -> Equation:
    """``(1/N) sum_i sum_t u_i^t``."""

    def fn(*us):
        return sum(u.mean(axis=-1) for u in us)

    return Equation(inputs, fn, "real", "profit", reduce=True)


def group_change_equation(inputs) -> Equation:
    """Mean score change per group; NaN for a group with no members. Inputs ``(X^0, X^T, A)``."""

    def fn(x0, xt, a):
        d = xt - x0
        out = []
        for j in (0, 1):
            m = a == j
            cnt = m.sum(axis=-1)
            with np.errstate(invalid="ignore", divide="ignore"):
                out.append(np.where(cnt > 0, (d * m).sum(axis=-1) / np.maximum(cnt, 1), np.nan))
        return np.stack(out, axis=-1)

    return Equation(inputs, fn, "real", "group_change", reduce=True)


def build_lending_scm(groups: GroupModel | None = None, params: LendingParams = LendingParams(),
                      thresholds: Sequence[float] | None = None) -> ScmGraph:
    """The lending SCM unrolled over ``params.steps`` steps.

    Per unit: ``U_A -> A``, ``U_X -> X@0``; at each step ``t`` fresh ``U_T@t`` and
    ``U_Y@t`` drive ``T@t``, ``Y@t``, ``u@t`` and ``X@t+1``. ``profit`` sums
    utilities over steps (averaged over units) and ``delta`` holds the
    per-group mean of ``X@T - X@0`` on the ``group`` plate.

    The bank's default rule uses the profit-maximising thresholds unless
    ``thresholds`` is given.
    """
    groups = groups or default_groups()
    if thresholds is None:
        from .thresholds import compute_thresholds

        thresholds = compute_thresholds("MaxProf", groups, params).tau
    tau = tuple(float(t) for t in thresholds)
    if len(tau) != 2:
        raise InvalidParamsError("need one threshold per group")
    bounds = params.score_bounds if params.clamps else None
    nodes = [
        exogenous("U_A", Bernoulli(groups.theta), plate=UNIT),
        endogenous("A", identity(("U_A",), kind="binary"), plate=UNIT),
        exogenous("U_X", Uniform(0.0, 1.0), plate=UNIT),
        endogenous("X", score_equation(("U_X", "A"), groups), plate=UNIT, step=0),
    ]
    rho_fn = groups.rho
    utilities = []
    for t in range(params.steps):
        x, x_next = f"X@{t}", f"X@{t + 1}"
        nodes += [
            exogenous("U_T", Bernoulli(params.gamma), plate=UNIT, step=t),
            exogenous("U_Y", Uniform(0.0, 1.0), plate=UNIT, step=t),
            endogenous("T", threshold_equation((f"U_T@{t}", x, "A"), tau), plate=UNIT, step=t),
            endogenous("Y", outcome_equation((f"U_Y@{t}", x, "A"), rho_fn, params.outcome_offset,
                                             params={"groups": groups}), plate=UNIT, step=t),
            endogenous("u", utility_equation((f"Y@{t}", f"T@{t}"), params.u_plus, params.u_minus), plate=UNIT, step=t),
            endogenous("X", update_equation((x, f"Y@{t}", f"T@{t}"), params.c_plus, params.c_minus, bounds),
                       plate=UNIT, step=t + 1),
        ]
        utilities.append(f"u@{t}")
    nodes += [
        endogenous("profit", profit_equation(tuple(utilities))),
        endogenous("delta", group_change_equation(("X@0", f"X@{params.steps}", "A")), plate=GROUP),
    ]
    return ScmGraph(nodes, {UNIT: int(params.n_units), GROUP: 2})


def delta_query(j: int):
    def query(worlds):
        return worlds["delta"][:, j]

    query.__name__ = f"delta_{j}"
    return query


def profit_query(worlds):
    return worlds["profit"]
