"""Atomic and policy interventions.

Interventions are plain values that know how to transform a graph; applying
one never touches the input graph. A target may be an exact node id or a base
name, in which case every step instance of that name is replaced.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass
from typing import Callable, Sequence, Union

from .equations import Equation, constant
from .errors import ConflictError, KindMismatchError, ScmError, UnknownNodeError
from .graph import Node, ScmGraph
from .priors import NoisePrior
from .sampling import Estimate, Query, estimate

Replacement = Union[Equation, NoisePrior, Callable[[Node, Equation], Equation]]


class InvalidInterventionError(ScmError, ValueError):
    pass


class Intervention:
    def targets(self) -> tuple:
        raise NotImplementedError

    def apply(self, graph: ScmGraph) -> ScmGraph:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Atomic(Intervention):
    """``do(node = value)``: the node becomes a constant with no parents."""

    node: str
    value: object

    def targets(self):
        return (self.node,)

    def apply(self, graph):
        ids = graph.resolve(self.node)
        new = []
        for nid in ids:
            node = graph[nid]
            if node.is_exogenous:
                raise InvalidInterventionError(
                    f"atomic intervention on exogenous node {nid!r}; replace its prior with do_policy instead"
                )
            _check_kind(node, self.value)
            new.append(node.with_equation(constant(value=self.value, kind=node.kind)))
        return graph.replace(*new)

    def describe(self):
        return f"do({self.node}={self.value})"


@dataclass(frozen=True)
class Policy(Intervention):
    """``do(f_node -> replacement)``.

    ``replacement`` is an :class:`Equation`, a :class:`NoisePrior` (for
    exogenous targets), or a callable ``(node, old_equation) -> Equation`` that
    builds the new mechanism from the one it replaces.
    """

    node: str
    replacement: Replacement
    label: str = ""

    def targets(self):
        return (self.node,)

    def apply(self, graph):
        new = []
        for nid in graph.resolve(self.node):
            node = graph[nid]
            rep = self.replacement
            if isinstance(rep, NoisePrior):
                if not node.is_exogenous:
                    raise InvalidInterventionError(f"prior replacement on endogenous node {nid!r}")
                new.append(node.with_prior(rep))
                continue
            if not isinstance(rep, Equation):
                rep = rep(node, node.equation)
            if node.is_exogenous:
                raise InvalidInterventionError(f"equation replacement on exogenous node {nid!r}")
            for inp in rep.inputs:
                if inp not in graph:
                    raise UnknownNodeError(f"replacement for {nid!r} reads unknown node {inp!r}")
            new.append(node.with_equation(rep))
        return graph.replace(*new)

    def describe(self):
        what = self.label or (self.replacement.describe() if isinstance(self.replacement, Equation)
                              else getattr(self.replacement, "__name__", type(self.replacement).__name__))
        return f"do(f_{self.node} -> {what})"


@dataclass(frozen=True)
class Composite(Intervention):
    members: tuple = ()

    def targets(self):
        return tuple(t for m in self.members for t in m.targets())

    def apply(self, graph):
        seen = {}
        for m in self.members:
            for t in m.targets():
                for nid in _resolve_or_new(graph, t):
                    if nid in seen:
                        raise ConflictError(f"node {nid!r} targeted by both {seen[nid]} and {m.describe()}")
                    seen[nid] = m.describe()
        for m in self.members:
            graph = m.apply(graph)
        return graph

    def describe(self):
        if not self.members:
            return "do()"
        return " + ".join(m.describe() for m in self.members)


IDENTITY = Composite(())


def _resolve_or_new(graph, target):
    # interventions that add nodes target ids the graph does not have yet
    try:
        return graph.resolve(target)
    except UnknownNodeError:
        return (target,)


def _check_kind(node: Node, value):
    kind = node.kind
    if isinstance(value, bool):
        value = int(value)
    if not isinstance(value, numbers.Real):
        raise KindMismatchError(f"{node.id!r} expects a {kind} value, got {value!r}")
    if kind == "binary" and value not in (0, 1):
        raise KindMismatchError(f"{node.id!r} is binary; cannot set it to {value!r}")
    if kind == "integer" and int(value) != value:
        raise KindMismatchError(f"{node.id!r} is integer-valued; cannot set it to {value!r}")


def compose(interventions: Sequence[Intervention]) -> Composite:
    """Combine interventions with pairwise distinct targets (nested composites are flattened)."""
    flat = []
    for iv in interventions:
        flat.extend(iv.members if isinstance(iv, Composite) else [iv])
    seen = set()
    for iv in flat:
        for t in iv.targets():
            if t in seen:
                raise ConflictError(f"two interventions target {t!r}")
            seen.add(t)
    return Composite(tuple(flat))


def apply(intervention: Intervention | None, graph: ScmGraph) -> ScmGraph:
    return graph if intervention is None else intervention.apply(graph)


def do_atomic(graph: ScmGraph, node: str, value) -> ScmGraph:
    return Atomic(node, value).apply(graph)


def do_policy(graph: ScmGraph, node: str, replacement: Replacement) -> ScmGraph:
    return Policy(node, replacement).apply(graph)


def interventional_estimate(graph: ScmGraph, intervention: Intervention | None, query: Query, n: int, seed: int,
                            jobs: int = 1) -> Estimate:
    """``estimate`` on the intervened graph."""
    return estimate(apply(intervention, graph), query, n, seed, jobs=jobs)
