"""Off-policy evaluation: model-based, importance sampling, counterfactual."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng
from .counterfactual import counterfactual_batch
from .equations import Equation
from .errors import AllWorldsInconsistentError, EmptyDatasetError, InvalidDatasetError, UnsupportedActionError
from .graph import ScmGraph
from .interventions import Intervention, Policy, apply
from .sampling import Query, estimate, query_values, sample_worlds, summarize
from .world import WorldBatch

METHODS = ("IS", "MB", "CF")


@dataclass(frozen=True)
class DecisionPolicy:
    """A binary decision rule: its structural equation and ``P(action = 1 | context)``.

    ``prob_one`` reads the policy's context nodes from a mapping of arrays and
    returns the probability of choosing action 1.
    """

    name: str
    node: str
    equation: Equation
    prob_one: Callable[[Mapping], np.ndarray]
    form: str = ""

    @property
    def intervention(self) -> Policy:
        return Policy(self.node, self.equation, label=self.name)

    def action_prob(self, context: Mapping, action) -> np.ndarray:
        p = np.asarray(self.prob_one(context), dtype=np.float64)
        return np.where(np.asarray(action) == 1, p, 1.0 - p)


@dataclass
class LoggedDataset:
    """Observed worlds generated under a behaviour policy.

    ``behavior_prob[node][i]`` is the probability the behaviour policy gave to
    the action actually logged at ``node`` in world ``i``. NaN marks a missing
    record.
    """

    worlds: WorldBatch
    behavior_prob: dict

    def __post_init__(self):
        self.behavior_prob = {k: np.asarray(v, dtype=np.float64) for k, v in self.behavior_prob.items()}
        for node, p in self.behavior_prob.items():
            if p.shape[:1] != (len(self.worlds),):
                raise InvalidDatasetError(f"behavior_prob[{node!r}] has {p.shape[:1]} rows for {len(self.worlds)} worlds")
            recorded = p[~np.isnan(p)]
            if ((recorded <= 0) | (recorded > 1)).any():
                raise InvalidDatasetError(f"behavior_prob[{node!r}] must lie in (0, 1]")

    def __len__(self):
        return len(self.worlds)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i, wid in enumerate(self.worlds.world_ids):
                record = {
                    "world_id": int(wid),
                    "nodes": {k: _jsonable(v[i]) for k, v in self.worlds.values.items()},
                    "behavior_prob": {k: _jsonable(v[i]) for k, v in self.behavior_prob.items()},
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "LoggedDataset":
        ids, nodes, probs = [], {}, {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    ids.append(int(rec["world_id"]))
                    for k, v in rec["nodes"].items():
                        nodes.setdefault(k, []).append(v)
                    for k, v in rec.get("behavior_prob", {}).items():
                        probs.setdefault(k, []).append(math.nan if v is None else v)
                except (KeyError, TypeError, ValueError) as exc:
                    raise InvalidDatasetError(f"{path}:{lineno}: malformed record ({exc})") from exc
        for k, col in {**nodes, **probs}.items():
            if len(col) != len(ids):
                raise InvalidDatasetError(f"field {k!r} missing from some records")
        values = {k: _column(v) for k, v in nodes.items()}
        return cls(WorldBatch(values, ids), {k: np.asarray(v, dtype=np.float64) for k, v in probs.items()})


def _jsonable(v):
    v = np.asarray(v)
    if v.ndim:
        return [_jsonable(x) for x in v]
    if v.dtype.kind in "iub":
        return int(v)
    f = float(v)
    return None if math.isnan(f) else f


def _column(values):
    return np.asarray([np.nan if v is None else v for v in values])


@dataclass
class EvaluationReport:
    method: str
    estimand: str
    mean: float
    std_error: float
    n_used: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.std_error >= 0 or math.isnan(self.std_error)):
            raise ValueError("std_error must be >= 0")

    def to_dict(self) -> dict:
        return {"method": self.method, "estimand": self.estimand, "mean": self.mean, "std_error": self.std_error,
                "n_used": self.n_used, "metadata": self.metadata}


def _describe(iv) -> str:
    return "do()" if iv is None else iv.describe()


def value_model_based(graph: ScmGraph, target_policy: Intervention, query: Query, n: int, seed: int,
                      estimand: str | None = None, jobs: int = 1) -> EvaluationReport:
    """Simulate the target policy inside the model and average the query."""
    target = apply(target_policy, graph)
    est = estimate(target, query, n, seed, jobs=jobs)
    return EvaluationReport("MB", estimand or _qname(query), est.mean, est.std_error, est.n_used,
                            {"seed": seed, "graph": target.fingerprint, "intervention": _describe(target_policy)})


def _qname(query) -> str:
    return query if isinstance(query, str) else getattr(query, "__name__", "query")


def importance_weights(dataset: LoggedDataset, target_prob: Callable[[WorldBatch], Mapping[str, np.ndarray]]) -> np.ndarray:
    """Per-world product over action nodes of target / behaviour probability.

    ``target_prob(worlds)`` returns, per action node, the probability the
    target policy assigns to the logged action.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("empty dataset")
    target = target_prob(dataset.worlds)
    w = np.ones(len(dataset))
    for node, pi_t in target.items():
        pi_t = np.asarray(pi_t, dtype=np.float64)
        if node not in dataset.behavior_prob:
            if np.any(pi_t > 0):
                raise UnsupportedActionError(f"no behaviour probabilities logged for action node {node!r}")
            return np.zeros(len(dataset))
        pi_b = dataset.behavior_prob[node]
        missing = np.isnan(pi_b)
        if np.any(missing & (pi_t > 0)):
            raise UnsupportedActionError(f"target supports actions at {node!r} whose behaviour probability is missing")
        ratio = np.where(missing, 0.0, pi_t / np.where(missing, 1.0, pi_b))
        if ratio.ndim > 1:
            ratio = ratio.reshape(len(ratio), -1).prod(axis=1)
        w = w * ratio
    return w


def value_importance_sampling(dataset: LoggedDataset, target_prob, query: Query, variant: str = "self-normalized",
                              estimand: str | None = None) -> EvaluationReport:
    """Reweight logged outcomes by the target/behaviour density ratio.

    Both the unnormalised (divide by n) and the self-normalised (divide by the
    weight sum) estimates are computed; ``variant`` picks the one reported as
    ``mean``, the other lands in ``metadata``. Standard errors use the delta
    method for the self-normalised form.
    """
    if variant not in ("self-normalized", "unnormalized"):
        raise ValueError(f"unknown IS variant {variant!r}")
    w = importance_weights(dataset, target_prob)
    q = query_values(query, dataset.worlds)
    n = len(w)
    wq = w * q
    un_mean = float(wq.mean())
    un_se = float(wq.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    total = float(w.sum())
    if total > 0:
        sn_mean = float(wq.sum() / total)
        sn_se = float(math.sqrt(np.sum(w**2 * (q - sn_mean) ** 2)) / total)
    else:
        sn_mean = sn_se = math.nan
    meta = {"unnormalized": {"mean": un_mean, "std_error": un_se}, "self-normalized": {"mean": sn_mean, "std_error": sn_se},
            "variant": variant, "weight_sum": total, "max_weight": float(w.max())}
    mean, se = (sn_mean, sn_se) if variant == "self-normalized" else (un_mean, un_se)
    return EvaluationReport("IS", estimand or _qname(query), mean, se, n, meta)


def value_counterfactual(graph: ScmGraph, dataset: LoggedDataset, target_policy: Intervention, query: Query,
                         m_posterior: int, seed: int, check_support: bool = False,
                         estimand: str | None = None) -> EvaluationReport:
    """Average the query over counterfactual worlds abducted from each log.

    ``graph`` must describe the logging process, behaviour policy included.
    Logged worlds that the model cannot reproduce are dropped and counted.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("empty dataset")
    worlds, factual_index, posterior = counterfactual_batch(graph, dataset.worlds, target_policy, m_posterior, seed,
                                                            check_support)
    n_bad = int((~posterior.consistent).sum())
    if n_bad == len(dataset):
        raise AllWorldsInconsistentError("no logged world is consistent with the model")
    q = query_values(query, worlds).reshape(-1, m_posterior).mean(axis=1)
    est = summarize(q)
    return EvaluationReport("CF", estimand or _qname(query), est.mean, est.std_error, est.n_used,
                            {"seed": seed, "graph": graph.fingerprint, "intervention": _describe(target_policy),
                             "m_posterior": m_posterior, "n_inconsistent": n_bad})


def log_dataset(graph: ScmGraph, behavior: DecisionPolicy, n: int, seed: int, observed: Sequence[str]) -> LoggedDataset:
    """Run ``behavior`` in ``graph`` and keep the observed nodes plus logged propensities."""
    worlds = sample_worlds(apply(behavior.intervention, graph), n, seed)
    p = behavior.action_prob(worlds, worlds[behavior.node])
    return LoggedDataset(worlds.restrict(observed), {behavior.node: p})


# --- mismatch sweep -----------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """One candidate evaluation model in a sweep."""

    prior_family: str
    sigma: float
    graph: ScmGraph


TABLE_COLUMNS = ("method", "prior_family", "sigma", "behavior", "target", "abs_error", "std_error")


@dataclass
class SweepResult:
    reports: list
    rows: list
    truths: dict

    def mae(self) -> dict:
        """Mean absolute error per method with the standard error of that mean."""
        out = {}
        for method in sorted({r["method"] for r in self.rows}):
            errs = np.array([r["abs_error"] for r in self.rows if r["method"] == method])
            se = float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else math.nan
            out[method] = (float(errs.mean()), se)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            for r in self.rows:
                writer.writerow([r[c] for c in TABLE_COLUMNS])


def cell_seed(*labels) -> int:
    """Deterministic 63-bit seed for one sweep cell."""
    return rng.stream_key(*labels) >> 65


def mismatch_sweep(true_graph: ScmGraph, models: Sequence[ModelSpec], policies: Sequence[DecisionPolicy],
                   methods: Sequence[str], query: Query, observed: Sequence[str],
                   context_fn: Callable[[WorldBatch], Mapping], seed: int, n_logs: int = 5000,
                   n_eval: int = 5000, m_posterior: int = 10, truth_fn: Callable[[DecisionPolicy], float] | None = None,
                   jobs: int = 1) -> SweepResult:
    """Evaluate every ordered (behaviour, target) pair under every model and method.

    Logs come from ``true_graph`` running the behaviour policy; each method
    evaluates the target policy with the (possibly misspecified) model graph.
    ``context_fn`` recovers the policy context from the observed nodes for
    importance weights. Ground truth defaults to Monte Carlo on the true graph
    at ten times ``n_eval``.
    """
    if len(policies) < 2:
        raise ValueError("need at least two policies")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if truth_fn is None:
        def truth_fn(policy):
            return estimate(apply(policy.intervention, true_graph), query, 10 * n_eval,
                            cell_seed(seed, "truth", policy.name)).mean
    truths = {p.name: float(truth_fn(p)) for p in policies}
    logs = {p.name: log_dataset(true_graph, p, n_logs, cell_seed(seed, "logs", p.name), observed) for p in policies}

    cells = list(product(models, policies, policies, methods))

    def run(cell):
        model, behavior, target, method = cell
        s = cell_seed(seed, method, model.prior_family, model.sigma, behavior.name, target.name)
        if method == "MB":
            rep = value_model_based(model.graph, target.intervention, query, n_eval, s)
        elif method == "IS":
            data = logs[behavior.name]

            def target_prob(worlds, target=target):
                return {target.node: target.action_prob(context_fn(worlds), worlds[target.node])}

            rep = value_importance_sampling(data, target_prob, query)
        else:
            logging_model = apply(behavior.intervention, model.graph)
            rep = value_counterfactual(logging_model, logs[behavior.name], target.intervention, query, m_posterior, s)
        rep.metadata.update(prior_family=model.prior_family, sigma=model.sigma, behavior=behavior.name,
                            target=target.name, truth=truths[target.name])
        row = {"method": method, "prior_family": model.prior_family, "sigma": model.sigma, "behavior": behavior.name,
               "target": target.name, "abs_error": abs(rep.mean - truths[target.name]), "std_error": rep.std_error}
        return rep, row

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    return SweepResult([r for r, _ in results], [row for _, row in results], truths)
