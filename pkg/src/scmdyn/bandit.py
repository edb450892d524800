"""Contextual-bandit SCMs, the three evaluation policies and the OPE comparisons.

The feedback equation is ``O = A (1 - c) + (1 - A) c`` with effective context
``c = U_c`` (or ``U_c + U_h`` in the confounded variant), so action 1 pays off
when ``c < 1/2``. ``P3`` is therefore the argmax rule ``A = 1 iff c <= 1/2``;
the rule with the comparison the other way round is kept as ``P3-literal``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, stats

from .equations import Equation, Interval, PointMass, register_equation
from .errors import InvalidParamsError, OrphanNoiseWarning
from .graph import ScmGraph, endogenous, exogenous
from .ope import DecisionPolicy, ModelSpec, SweepResult, mismatch_sweep, value_model_based
from .priors import Gaussian, Uniform

POLICY_IDS = ("P1", "P2", "P3", "P3-literal")
DEFAULT_SIGMA = 5.0
HIDDEN_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class BanditParams:
    sigma: float = DEFAULT_SIGMA
    prior_family: str = "uniform"
    confounded: bool = False
    observation_noise: bool = False
    hidden_lo: float = HIDDEN_RANGE[0]
    hidden_hi: float = HIDDEN_RANGE[1]
    omit_hidden: bool = False  # keep the U_h node but pin it at 0 (a model that ignores it)

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidParamsError(f"sigma must be > 0, got {self.sigma}")
        if self.prior_family not in ("uniform", "gaussian"):
            raise InvalidParamsError(f"prior_family must be 'uniform' or 'gaussian', got {self.prior_family!r}")
        if not self.hidden_lo < self.hidden_hi:
            raise InvalidParamsError("hidden_lo must be < hidden_hi")

    @property
    def context_prior(self):
        if self.prior_family == "uniform":
            return Uniform((1.0 - self.sigma) / 2.0, (1.0 + self.sigma) / 2.0)
        return Gaussian(0.0, self.sigma)

    @property
    def context_nodes(self) -> tuple:
        return ("U_c", "U_h") if self.confounded else ("U_c",)


def _context(values, nodes):
    c = np.asarray(values[nodes[0]], dtype=np.float64)
    for extra in nodes[1:]:
        c = c + values[extra]
    return c


@register_equation("bandit_outcome")
def outcome_equation(inputs, noisy=False) -> Equation:
    """``O = A (1 - c) + (1 - A) c`` (+ ``U_o`` when ``noisy``); inputs ``(A, contexts..., [U_o])``."""
    action = inputs[0]
    contexts = inputs[1:-1] if noisy else inputs[1:]

    def fn(a, *rest):
        c = rest[0]
        for x in rest[1 : len(contexts)]:
            c = c + x
        o = a * (1.0 - c) + (1 - a) * c
        if noisy:
            o = o + rest[-1]
        return o

    def abduct(output, known):
        if noisy:
            return {}
        a = known.get(action)
        if a is None:
            return {}
        c = np.where(np.asarray(a) == 1, 1.0 - output, output)
        unknown = [k for k in contexts if known.get(k) is None]
        if len(unknown) != 1:
            return {}
        rest = c
        for k in contexts:
            if k != unknown[0]:
                rest = rest - known[k]
        return {unknown[0]: PointMass(rest)}

    return Equation(inputs, fn, "real", "bandit_outcome", {"noisy": noisy}, abduct=abduct)


def _p_one(policy_id):
    if policy_id == "P1":
        return lambda c: np.where(c > 0.5, 0.25, 0.75)
    if policy_id == "P2":
        return lambda c: np.where(c > 0.75, 0.1, np.where(c < 0.25, 0.9, 0.5))
    if policy_id == "P3":
        return lambda c: np.where(c <= 0.5, 1.0, 0.0)
    if policy_id == "P3-literal":
        return lambda c: np.where(c > 0.5, 1.0, 0.0)
    if policy_id.startswith("const"):
        a = float(policy_id.split(":")[1])
        return lambda c: np.full(np.shape(c), a)
    if policy_id == "slot":
        return lambda c: np.full(np.shape(c), 0.5)
    if policy_id.startswith("flip:"):
        base = _p_one(policy_id[5:])
        return lambda c: 1.0 - base(c)
    raise InvalidParamsError(f"unknown bandit policy {policy_id!r}")


def _deterministic(policy_id) -> bool:
    if policy_id.startswith("flip:"):
        return _deterministic(policy_id[5:])
    return policy_id in ("P3", "P3-literal") or policy_id.startswith("const")


@register_equation("bandit_policy")
def policy_equation(inputs, policy="slot") -> Equation:
    """Action equation ``A = 1(U_a < p(c))``; inputs ``(contexts..., U_a)``.

    Deterministic policies ignore ``U_a``.
    """
    p_one = _p_one(policy)
    contexts, noise = tuple(inputs[:-1]), inputs[-1]
    deterministic = _deterministic(policy)

    def fn(*args):
        p = p_one(_context(dict(zip(contexts, args[:-1])), contexts))
        if deterministic:
            return (p >= 0.5).astype(np.int64)
        return (args[-1] < p).astype(np.int64)

    def abduct(output, known):
        if deterministic or any(known.get(k) is None for k in contexts):
            return {}
        p = p_one(_context(known, contexts))
        one = np.asarray(output) == 1
        return {noise: Interval(np.where(one, 0.0, p), np.where(one, p, 1.0), hi_open=one)}

    return Equation(inputs, fn, "binary", "bandit_policy", {"policy": policy}, abduct=abduct)


def build_bandit_scm(params: BanditParams = BanditParams(), policy: str = "slot") -> ScmGraph:
    """Bandit SCM over ``U_c, U_a, U_o, A, O`` (plus ``U_h`` when confounded).

    ``A`` holds a placeholder policy (fair coin) until a policy intervention
    replaces it. ``U_o`` is only wired into ``O`` when ``observation_noise``.
    """
    nodes = [exogenous("U_c", params.context_prior), exogenous("U_a", Uniform(0.0, 1.0)), exogenous("U_o", Gaussian(0.0, 1.0))]
    if params.confounded:
        hidden = Gaussian(0.0, 0.0) if params.omit_hidden else Uniform(params.hidden_lo, params.hidden_hi)
        nodes.append(exogenous("U_h", hidden))
    ctx = params.context_nodes
    a_inputs = ctx + ("U_a",)
    o_inputs = ("A",) + ctx + (("U_o",) if params.observation_noise else ())
    nodes.append(endogenous("A", policy_equation(a_inputs, policy=policy)))
    nodes.append(endogenous("O", outcome_equation(o_inputs, noisy=params.observation_noise)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OrphanNoiseWarning)
        return ScmGraph(nodes)


def make_policy(policy_id: str, params: BanditParams = BanditParams()) -> DecisionPolicy:
    """A decision policy on ``A``.

    ``policy_id`` is one of ``P1``, ``P2``, ``P3``, ``P3-literal``, ``const:<a>``
    (always action ``a``) or ``flip:<id>`` (the complement of another policy).
    """
    _p_one(policy_id)
    ctx = params.context_nodes
    inputs = ctx + ("U_a",)
    p_one = _p_one(policy_id)
    form = {"P3": "argmax (A=1 iff c<=0.5)", "P3-literal": "as printed (A=1 iff c>0.5)"}.get(policy_id, "")
    return DecisionPolicy(policy_id, "A", policy_equation(inputs, policy=policy_id),
                          lambda values, ctx=ctx: p_one(_context(values, ctx)), form)


def flipped_policy(policy_id: str, params: BanditParams = BanditParams()) -> DecisionPolicy:
    """The policy choosing action 1 with probability ``1 - pi(1 | c)``."""
    return make_policy(f"flip:{policy_id}", params)


def context_from_observation(worlds, params: BanditParams = BanditParams()) -> dict:
    """Recover the effective context from logged ``(A, O)``; extra context nodes are set to 0."""
    a, o = np.asarray(worlds["A"]), np.asarray(worlds["O"], dtype=np.float64)
    out = {"U_c": np.where(a == 1, 1.0 - o, o)}
    for extra in params.context_nodes[1:]:
        out[extra] = np.zeros_like(out["U_c"])
    return out


def _context_density(params: BanditParams):
    base = params.context_prior
    if not params.confounded or params.omit_hidden:
        if isinstance(base, Uniform):
            return (lambda c: np.where((c >= base.lo) & (c <= base.hi), 1.0 / (base.hi - base.lo), 0.0)), (base.lo, base.hi)
        return (lambda c: stats.norm.pdf(c, 0.0, base.stddev)), (-np.inf, np.inf)
    if not isinstance(base, Uniform):
        raise InvalidParamsError("closed-form density only for uniform contexts in the confounded model")
    lo_c, hi_c, lo_h, hi_h = base.lo, base.hi, params.hidden_lo, params.hidden_hi

    def pdf(c):
        overlap = np.clip(np.minimum(hi_c, c - lo_h) - np.maximum(lo_c, c - hi_h), 0.0, None)
        return overlap / ((hi_c - lo_c) * (hi_h - lo_h))

    return pdf, (lo_c + lo_h, hi_c + hi_h)


def policy_value(policy: DecisionPolicy | str, params: BanditParams = BanditParams()) -> float:
    """Exact ``E[O]`` under a policy by numerical quadrature over the context density."""
    if isinstance(policy, str):
        policy = make_policy(policy, params)
    pdf, (lo, hi) = _context_density(params)
    ctx = params.context_nodes

    def integrand(c):
        values = {ctx[0]: np.asarray(c)}
        for extra in ctx[1:]:
            values[extra] = np.asarray(0.0)
        p = float(policy.prob_one(values))
        return (p * (1.0 - c) + (1.0 - p) * c) * float(pdf(np.asarray(c)))

    breaks = [b for b in (0.25, 0.5, 0.75) if lo < b < hi]
    if math.isfinite(lo) and math.isfinite(hi):
        edges = [lo] + breaks + [hi]
        return float(sum(integrate.quad(integrand, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])))
    edges = [-np.inf] + breaks + [np.inf]
    return float(sum(integrate.quad(integrand, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])))


def compare_policies_model_based(params: BanditParams = BanditParams(), policies: Sequence[str] = ("P1", "P2", "P3"),
                                 n: int = 5000, seed: int = 0):
    """Model-based value of each policy on the bandit model."""
    graph = build_bandit_scm(params)
    reports = []
    for pid in policies:
        pol = make_policy(pid, params)
        rep = value_model_based(graph, pol.intervention, "O", n, seed, estimand="E[O]")
        rep.metadata["policy"] = pid
        if pol.form:
            rep.metadata["policy_form"] = pol.form
        reports.append(rep)
    return reports


MISMATCH_SIGMAS = (1.0, 3.0, 7.0, 9.0)
MISMATCH_FAMILIES = ("uniform", "gaussian")


def compare_ope_methods(protocol: str = "mismatch", params: BanditParams = BanditParams(), seed: int = 0,
                        policies: Sequence[str] = ("P1", "P2", "P3"), methods: Sequence[str] = ("IS", "MB", "CF"),
                        sigmas: Sequence[float] = MISMATCH_SIGMAS, families: Sequence[str] = MISMATCH_FAMILIES,
                        n_logs: int = 5000, n_eval: int = 5000, m_posterior: int = 10, jobs: int = 1) -> SweepResult:
    """Run the bandit OPE comparison.

    ``mismatch``: logs from the bandit with ``params`` (sigma 5, uniform), each
    method evaluated under every misspecified context prior in
    ``families x sigmas``. ``omitted-variable``: the truth adds ``U_h`` to the
    context (with ``U_c ~ U(0, 1)``); the model pins ``U_h`` at 0.
    ``control``: the model equals the truth.
    """
    if protocol == "mismatch":
        truth = params
        models = [ModelSpec(fam, float(s), build_bandit_scm(BanditParams(sigma=s, prior_family=fam)))
                  for fam in families for s in sigmas]
    elif protocol in ("omitted-variable", "ovb"):
        truth = BanditParams(sigma=1.0, prior_family="uniform", confounded=True, hidden_lo=params.hidden_lo,
                             hidden_hi=params.hidden_hi)
        model = BanditParams(sigma=1.0, prior_family="uniform", confounded=True, omit_hidden=True)
        models = [ModelSpec("omitted-U_h", 1.0, build_bandit_scm(model))]
    elif protocol == "control":
        truth = params
        models = [ModelSpec(params.prior_family, float(params.sigma), build_bandit_scm(params))]
    else:
        raise InvalidParamsError(f"unknown protocol {protocol!r}")
    pols = [make_policy(p, truth) for p in policies]
    result = mismatch_sweep(
        build_bandit_scm(truth), models, pols, methods, "O", ("A", "O"),
        lambda w: context_from_observation(w, truth), seed, n_logs=n_logs, n_eval=n_eval, m_posterior=m_posterior,
        truth_fn=lambda p: policy_value(p, truth), jobs=jobs,
    )
    return result
