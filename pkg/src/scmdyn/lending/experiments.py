"""Third-party interventions on the lending model and the two experiments built on them."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from ..equations import Equation
from ..errors import InvalidParamsError
from ..graph import ScmGraph, endogenous
from ..interventions import Intervention, Policy, apply, compose
from ..ope import EvaluationReport
from ..sampling import multi_query_samples, summarize
from .groups import GroupModel
from .model import UNIT, LendingParams, build_lending_scm, delta_query, outcome_equation, profit_query
from .thresholds import TOLERANCE, GRID_RESOLUTION, ThresholdPolicy, compute_thresholds

RESULT_COLUMNS = ("criterion", "tau_0", "tau_1", "E_U", "se_U", "E_delta_0", "se_0", "E_delta_1", "se_1")
ROBUSTNESS_COLUMNS = ("steps", "variant", "estimand", "sensitivity", "se")
ESTIMANDS = ("profit", "delta_0", "delta_1")
BUREAU_LEVEL = 600.0


# --- credit bureau ------------------------------------------------------------


def _transform(kind, level):
    if callable(kind):
        return kind
    if kind == "identity":
        return lambda x: x
    if kind == "floor":
        return lambda x: np.maximum(x, level)
    if kind == "cap":
        return lambda x: np.minimum(x, level)
    raise InvalidParamsError(f"unknown score transform {kind!r}")


@dataclass(frozen=True)
class BureauIntervention(Intervention):
    """``do(f_Xhat -> transform)``: the bank's decision reads a reported score ``Xhat = transform(X)``.

    Applying it inserts ``Xhat@t`` after each ``X@t`` read by a ``consumers``
    node and points those nodes at it; outcomes and score updates keep
    reading the true score. ``floor`` is ``max(X, level)``, ``cap`` is
    ``min(X, level)``.
    """

    transform: object = "floor"
    level: float = BUREAU_LEVEL
    consumers: tuple = ("T",)

    def targets(self):
        return ("Xhat",)

    def _equation(self, src):
        fn = _transform(self.transform, self.level)
        if callable(self.transform):
            return Equation((src,), fn, "real")
        return Equation((src,), fn, "real", "score_transform", {"transform": self.transform, "level": float(self.level)})

    def apply(self, graph: ScmGraph) -> ScmGraph:
        new = []
        for nid in graph.order:
            node = graph[nid]
            if node.name not in self.consumers:
                continue
            if node.is_exogenous:
                continue
            renames = {}
            for inp in node.inputs:
                src = graph[inp]
                if src.name == "X":
                    hat = f"Xhat@{src.step}" if src.step is not None else "Xhat"
                    renames[inp] = hat
                    new.append(endogenous("Xhat", self._equation(inp), plate=src.plate, step=src.step))
                elif src.name == "Xhat":
                    new.append(src.with_equation(self._equation(src.inputs[0])))
            if renames:
                new.append(node.with_equation(node.equation.rename_inputs(renames)))
        if not new:
            raise InvalidParamsError("no node reads a score; nothing for the bureau to transform")
        return graph.replace(*new)

    def describe(self):
        return f"do(f_Xhat -> {getattr(self.transform, '__name__', self.transform)}({self.level:g}))"


def credit_bureau_intervention(transform="floor", level: float = BUREAU_LEVEL) -> BureauIntervention:
    """Bureau reporting ``transform(X)``; ``floor`` (default) raises every score below ``level`` to it."""
    _transform(transform, level)
    return BureauIntervention(transform, float(level))


# --- government ---------------------------------------------------------------


def _shift(b):
    b = np.broadcast_to(np.asarray(b, np.float64), (2,)).copy()
    if not np.all(np.isfinite(b)):
        raise InvalidParamsError("shift must be finite")
    return b


def shifted_rho(groups: GroupModel, b) -> Callable:
    b = _shift(b)

    def rho(x, a):
        return np.clip(groups.rho(x, a) + np.where(np.asarray(a) == 1, b[1], b[0]), 0.0, 1.0)

    return rho


def count_clamped(groups: GroupModel, b, x, a) -> int:
    """How many ``(x, a)`` pairs have ``rho + b`` outside ``[0, 1]``."""
    b = _shift(b)
    r = groups.rho(x, a) + np.where(np.asarray(a) == 1, b[1], b[0])
    return int(np.count_nonzero((r < 0) | (r > 1)))


def government_intervention(b, groups: GroupModel) -> Policy:
    """``do(f_Y -> f_Y + b)``: repayment probability ``clip(rho(x, a) + b_a, 0, 1)``.

    ``b`` is a global shift or one shift per group.
    """
    b = _shift(b)
    rho = shifted_rho(groups, b)

    def rule(node, old):
        return outcome_equation(old.inputs, rho, old.params.get("offset", 0.0), label="shifted",
                                params={"groups": groups, "shift": tuple(b)})

    rule.__name__ = f"rho+{tuple(b.tolist())}"
    return Policy("Y", rule, label=f"f_Y + {tuple(b.tolist())}")


# --- marginal repayment curve -------------------------------------------------


class MarginalVariants(NamedTuple):
    """The two ways of substituting ``rho_bar(x) = p(Y | X = x)`` for ``p(Y | X, A)``."""

    rho_bar: Callable
    threshold_policy: ThresholdPolicy  # EqOpp thresholds computed from rho_bar
    outcome_intervention: Policy  # outcomes sampled from rho_bar


def marginal_outcome_variant(groups: GroupModel, params: LendingParams = LendingParams(), criterion: str = "EqOpp",
                             grid_resolution: int = GRID_RESOLUTION, tolerance: float = TOLERANCE) -> MarginalVariants:
    def rho_bar(x, a=None):
        return groups.marginal_rho(x)

    policy = compute_thresholds(criterion, groups, params, grid_resolution, tolerance, rho=rho_bar)

    def rule(node, old):
        return outcome_equation(old.inputs, rho_bar, old.params.get("offset", 0.0), label="marginal",
                                params={"groups": groups})

    rule.__name__ = "rho_bar"
    return MarginalVariants(rho_bar, policy, Policy("Y", rule, label="rho_bar"))


# --- evaluation ---------------------------------------------------------------


def _queries():
    return {"profit": profit_query, "delta_0": delta_query(0), "delta_1": delta_query(1)}


def lending_samples(graph: ScmGraph, policy: ThresholdPolicy | None, extra: Intervention | None, n: int, seed: int,
                    jobs: int = 1, bounds=None) -> dict:
    """Per-world profit and group score changes under ``policy`` composed with ``extra``."""
    parts = []
    if policy is not None:
        parts.append(policy.intervention(bounds))
    if extra is not None:
        parts.append(extra)
    g = apply(compose(parts), graph) if parts else graph
    return multi_query_samples(g, _queries(), n, seed, jobs)


def _reports(samples, meta):
    out = {}
    for name, vals in samples.items():
        est = summarize(vals)
        out[name] = EvaluationReport("MB", f"E[{name}]", est.mean, est.std_error, est.n_used, dict(meta))
    return out


def evaluate_lending_policy(graph: ScmGraph, policy: ThresholdPolicy | None, extra: Intervention | None = None,
                            n: int = 100, seed: int = 0, jobs: int = 1) -> dict:
    """Model-based ``E[profit]`` and ``E[delta_j]`` under ``do(f_T -> pi_tau)`` plus ``extra``.

    Returns one :class:`EvaluationReport` per estimand, keyed ``profit``,
    ``delta_0`` and ``delta_1``. Worlds where a group is empty drop out of
    that group's estimate.
    """
    bounds = _bounds(graph)
    samples = lending_samples(graph, policy, extra, n, seed, jobs, bounds)
    meta = {"policy": None if policy is None else policy.criterion,
            "tau": None if policy is None else list(policy.clamped(bounds).tau if bounds else policy.tau),
            "extra": None if extra is None else extra.describe()}
    return _reports(samples, meta)


def _bounds(graph):
    x0 = graph["X@0"].equation.params.get("groups")
    return None if x0 is None else x0.bounds


def result_row(criterion: str, policy: ThresholdPolicy, reports: dict) -> dict:
    return {
        "criterion": criterion, "tau_0": policy.tau[0], "tau_1": policy.tau[1],
        "E_U": reports["profit"].mean, "se_U": reports["profit"].std_error,
        "E_delta_0": reports["delta_0"].mean, "se_0": reports["delta_0"].std_error,
        "E_delta_1": reports["delta_1"].mean, "se_1": reports["delta_1"].std_error,
    }


def write_rows(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()})


@dataclass
class BureauExperiment:
    """Per-criterion results with (``rows``) and without (``baseline``) the bureau intervention."""

    rows: list
    baseline: list
    policies: dict

    def sensitivity(self, criterion: str) -> float:
        """``|profit(with bureau) - profit(without)|`` for one criterion's thresholds."""
        a = next(r for r in self.rows if r["criterion"] == criterion)
        b = next(r for r in self.baseline if r["criterion"] == criterion)
        return abs(a["E_U"] - b["E_U"])


def bureau_experiment(groups: GroupModel, params: LendingParams = LendingParams(),
                      criteria: Sequence[str] = ("MaxProf", "DemPar", "EqOpp"), transform="floor",
                      level: float = BUREAU_LEVEL, n: int = 50, seed: int = 0, jobs: int = 1) -> BureauExperiment:
    """Evaluate each criterion's thresholds with and without the bureau transform (paired seeds).

    Thresholds are set on the true scores; the bureau then changes what the
    bank's rule reads.
    """
    graph = build_lending_scm(groups, params)
    bureau = credit_bureau_intervention(transform, level)
    rows, base, policies = [], [], {}
    for crit in criteria:
        pol = compute_thresholds(crit, groups, params)
        policies[crit] = pol
        rows.append(result_row(crit, pol, evaluate_lending_policy(graph, pol, bureau, n, seed, jobs)))
        base.append(result_row(crit, pol, evaluate_lending_policy(graph, pol, None, n, seed, jobs)))
    return BureauExperiment(rows, base, policies)


def threshold_sweep(groups: GroupModel, params: LendingParams, tau_0: Sequence[float], tau_1: Sequence[float],
                    extra: Intervention | None = None, n: int = 20, seed: int = 0, jobs: int = 1) -> list:
    """Result rows over a grid of manual thresholds (the surfaces behind profit / score-change plots)."""
    graph = build_lending_scm(groups, params)
    rows = []
    for t0 in tau_0:
        for t1 in tau_1:
            pol = ThresholdPolicy((t0, t1), params.gamma, "Manual")
            rows.append(result_row("Manual", pol, evaluate_lending_policy(graph, pol, extra, n, seed, jobs)))
    return rows


VARIANTS = ("none", "thresholds", "outcomes")


def robustness_sweep(groups: GroupModel, params: LendingParams = LendingParams(), steps_list: Sequence[int] = (1, 2, 3, 4, 5),
                     variants: Sequence[str] = VARIANTS, n: int = 50, seed: int = 0, jobs: int = 1) -> list:
    """Sensitivity of the EqOpp policy to substituting ``p(Y | X)`` for ``p(Y | X, A)``.

    ``thresholds``: EqOpp thresholds recomputed from the marginal curve.
    ``outcomes``: correct thresholds, outcomes sampled from the marginal curve.
    ``none``: the baseline itself. Each row is ``|E_q[.] - E[.]|`` over paired
    worlds with the standard error of the paired difference.
    """
    for v in variants:
        if v not in VARIANTS:
            raise InvalidParamsError(f"unknown variant {v!r}")
    baseline = compute_thresholds("EqOpp", groups, params)
    marginal = marginal_outcome_variant(groups, params)
    rows = []
    for steps in steps_list:
        p = dataclasses.replace(params, steps=int(steps))
        graph = build_lending_scm(groups, p, thresholds=baseline.tau)
        ref = lending_samples(graph, baseline, None, n, seed, jobs)
        for v in variants:
            if v == "none":
                alt = ref
            elif v == "thresholds":
                alt = lending_samples(graph, marginal.threshold_policy, None, n, seed, jobs)
            else:
                alt = lending_samples(graph, baseline, marginal.outcome_intervention, n, seed, jobs)
            for est in ESTIMANDS:
                d = alt[est] - ref[est]
                s = summarize(d)
                rows.append({"steps": int(steps), "variant": v, "estimand": est, "sensitivity": abs(s.mean),
                             "se": 0.0 if v == "none" else s.std_error})
    return rows
