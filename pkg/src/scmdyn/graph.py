"""Immutable SCM graphs."""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import warnings
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .equations import Equation
from .errors import (
    CycleError,
    DanglingParentError,
    DuplicateNodeError,
    GraphError,
    OrphanNoiseWarning,
    PlateMismatchError,
    UnknownNodeError,
)
from .priors import NoisePrior


@dataclass(frozen=True)
class Node:
    """One node of an SCM; exactly one of ``prior`` / ``equation`` is set."""

    name: str
    prior: NoisePrior | None = None
    equation: Equation | None = None
    plate: str | None = None
    step: int | None = None

    def __post_init__(self):
        if (self.prior is None) == (self.equation is None):
            raise GraphError(f"node {self.name!r} needs exactly one of prior / equation")

    @property
    def id(self) -> str:
        return self.name if self.step is None else f"{self.name}@{self.step}"

    @property
    def is_exogenous(self) -> bool:
        return self.prior is not None

    @property
    def inputs(self) -> tuple:
        return () if self.equation is None else self.equation.inputs

    @property
    def kind(self) -> str:
        return self.prior.kind if self.prior is not None else self.equation.kind

    def with_equation(self, equation: Equation) -> "Node":
        return dataclasses.replace(self, equation=equation, prior=None)

    def with_prior(self, prior: NoisePrior) -> "Node":
        return dataclasses.replace(self, prior=prior, equation=None)


def exogenous(name, prior, plate=None, step=None) -> Node:
    return Node(name, prior=prior, plate=plate, step=step)


def endogenous(name, equation, plate=None, step=None) -> Node:
    return Node(name, equation=equation, plate=plate, step=step)


def stable_repr(obj) -> str:
    """A process-independent textual form used for fingerprints and equality."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return repr(obj)
    if isinstance(obj, float):
        return repr(float(obj))
    if isinstance(obj, np.generic):
        return stable_repr(obj.item())
    if isinstance(obj, np.ndarray):
        return "array(" + stable_repr(obj.tolist()) + ")"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(stable_repr(x) for x in obj) + "]"
    if isinstance(obj, Mapping):
        items = sorted((str(k), stable_repr(v)) for k, v in obj.items())
        return "{" + ",".join(f"{k}:{v}" for k, v in items) + "}"
    if hasattr(obj, "fingerprint") and callable(obj.fingerprint):
        return obj.fingerprint()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        fields = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
        return type(obj).__name__ + stable_repr(fields)
    if callable(obj):
        return f"<{getattr(obj, '__module__', '?')}.{getattr(obj, '__qualname__', type(obj).__name__)}>"
    return repr(obj)


def _priority(node: Node):
    # exogenous first, cross-plate reductions last, node id breaks ties
    if node.is_exogenous:
        rank = 0
    elif node.equation.reduce:
        rank = 2
    else:
        rank = 1
    return (rank, node.id)


def _find_cycle(nodes: Mapping[str, Node], remaining: set) -> list:
    children = {nid: [] for nid in remaining}
    for nid in sorted(remaining):
        for parent in nodes[nid].inputs:
            if parent in remaining:
                children[parent].append(nid)
    color = dict.fromkeys(remaining, 0)
    stack_path = []

    def dfs(u):
        color[u] = 1
        stack_path.append(u)
        for v in sorted(children[u]):
            if color[v] == 1:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == 0:
                found = dfs(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = 2
        return None

    for start in sorted(remaining):
        if color[start] == 0:
            found = dfs(start)
            if found:
                return found
    return sorted(remaining)


def _check_and_order(nodes: Mapping[str, Node], plates: Mapping[str, int]) -> tuple:
    for node in nodes.values():
        if node.plate is not None and node.plate not in plates:
            raise PlateMismatchError(f"node {node.id!r} uses undeclared plate {node.plate!r}")
        for parent in node.inputs:
            if parent not in nodes:
                raise DanglingParentError(node.id, parent)
            if parent == node.id:
                raise CycleError([node.id, node.id])
            p_plate = nodes[parent].plate
            if p_plate is None or p_plate == node.plate or node.equation.reduce:
                continue
            raise PlateMismatchError(
                f"node {node.id!r} (plate {node.plate!r}) reads {parent!r} (plate {p_plate!r}) "
                "without a declared reduction"
            )

    indegree = {nid: len(set(n.inputs)) for nid, n in nodes.items()}
    children = {nid: set() for nid in nodes}
    for nid, n in nodes.items():
        for parent in set(n.inputs):
            children[parent].add(nid)
    heap = [_priority(n) for nid, n in nodes.items() if indegree[nid] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, nid = heapq.heappop(heap)
        order.append(nid)
        for child in children[nid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(heap, _priority(nodes[child]))
    if len(order) != len(nodes):
        raise CycleError(_find_cycle(nodes, set(nodes) - set(order)))
    return tuple(order)


class ScmGraph:
    """An immutable DAG of exogenous and endogenous nodes.

    Parameters
    ----------
    nodes : iterable of Node
    plates : mapping plate id -> size
    """

    __slots__ = ("_nodes", "_plates", "_order", "_fingerprint", "_children")

    def __init__(self, nodes: Iterable[Node], plates: Mapping[str, int] | None = None):
        table = {}
        for node in nodes:
            if node.id in table:
                raise DuplicateNodeError(f"duplicate node id {node.id!r}")
            table[node.id] = node
        plates = dict(plates or {})
        for pid, size in plates.items():
            if int(size) != size or size < 0:
                raise PlateMismatchError(f"plate {pid!r} needs a non-negative integer size")
        object.__setattr__(self, "_nodes", MappingProxyType(table))
        object.__setattr__(self, "_plates", MappingProxyType({k: int(v) for k, v in plates.items()}))
        object.__setattr__(self, "_order", _check_and_order(table, plates))
        object.__setattr__(self, "_fingerprint", None)
        children = {nid: [] for nid in table}
        for nid in self._order:
            for parent in dict.fromkeys(table[nid].inputs):
                children[parent].append(nid)
        object.__setattr__(self, "_children", MappingProxyType({k: tuple(v) for k, v in children.items()}))

    def __setattr__(self, name, value):
        raise AttributeError("ScmGraph is immutable")

    # mapping-ish access
    @property
    def nodes(self) -> Mapping[str, Node]:
        return self._nodes

    @property
    def plates(self) -> Mapping[str, int]:
        return self._plates

    @property
    def order(self) -> tuple:
        return self._order

    def __getitem__(self, node_id) -> Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node_id!r}") from None

    def __contains__(self, node_id) -> bool:
        return node_id in self._nodes

    def __iter__(self):
        return iter(self._order)

    def __len__(self):
        return len(self._nodes)

    def __eq__(self, other):
        if not isinstance(other, ScmGraph):
            return NotImplemented
        return dict(self._nodes) == dict(other._nodes) and dict(self._plates) == dict(other._plates)

    def __hash__(self):
        return hash(self.fingerprint)

    def __repr__(self):
        return f"ScmGraph({len(self._nodes)} nodes, plates={dict(self._plates)})"

    @property
    def exogenous_ids(self) -> tuple:
        return tuple(nid for nid in self._order if self._nodes[nid].is_exogenous)

    @property
    def endogenous_ids(self) -> tuple:
        return tuple(nid for nid in self._order if not self._nodes[nid].is_exogenous)

    def parents(self, node_id) -> tuple:
        return tuple(dict.fromkeys(self[node_id].inputs))

    def children(self, node_id) -> tuple:
        self[node_id]
        return self._children[node_id]

    @property
    def orphans(self) -> tuple:
        """Exogenous nodes with no endogenous consumer."""
        return tuple(nid for nid in self.exogenous_ids if not self._children[nid])

    def plate_size(self, node_id) -> int | None:
        plate = self[node_id].plate
        return None if plate is None else self._plates[plate]

    def shape(self, node_id) -> tuple:
        size = self.plate_size(node_id)
        return () if size is None else (size,)

    def resolve(self, target: str) -> tuple:
        """Node ids addressed by ``target``: an exact id, or every step of a name."""
        if target in self._nodes:
            return (target,)
        hits = tuple(nid for nid in self._order if self._nodes[nid].name == target)
        if not hits:
            raise UnknownNodeError(f"unknown node {target!r}")
        return hits

    def replace(self, *nodes: Node, plates: Mapping[str, int] | None = None) -> "ScmGraph":
        """A new graph with the given nodes swapped in or added."""
        table = dict(self._nodes)
        for node in nodes:
            table[node.id] = node
        return ScmGraph(table.values(), plates if plates is not None else self._plates)

    @property
    def fingerprint(self) -> str:
        if self._fingerprint is None:
            parts = []
            for nid in sorted(self._nodes):
                n = self._nodes[nid]
                body = n.prior.to_dict() if n.is_exogenous else n.equation._key()
                if not n.is_exogenous and n.equation.name == "custom":
                    body = ("custom", n.equation.inputs, n.equation.kind, stable_repr(n.equation.fn))
                parts.append(stable_repr((nid, n.plate, n.step, body)))
            parts.append(stable_repr(dict(self._plates)))
            digest = hashlib.sha256("\n".join(parts).encode()).hexdigest()[:16]
            object.__setattr__(self, "_fingerprint", digest)
        return self._fingerprint


def validate_and_order(graph: ScmGraph) -> tuple:
    """Topological order of ``graph`` (exogenous first, reductions last, id tie-break).

    Graph construction already rejects cycles, dangling inputs and undeclared
    cross-plate reads; this entry point additionally warns about exogenous
    nodes that nothing consumes.
    """
    order = _check_and_order(graph.nodes, graph.plates)
    for nid in graph.orphans:
        warnings.warn(f"exogenous node {nid!r} has no consumer", OrphanNoiseWarning, stacklevel=2)
    return order
