"""JSON descriptions of graphs built from registered equations."""

from __future__ import annotations

import json
from typing import Any, Mapping

from .equations import make_equation
from .errors import GraphError
from .graph import Node, ScmGraph
from .priors import prior_from_dict


def graph_to_dict(graph: ScmGraph) -> dict:
    """Declarative form of ``graph``; every equation must come from the registry."""
    nodes = []
    for nid in graph.order:
        node = graph[nid]
        entry: dict[str, Any] = {"name": node.name}
        if node.step is not None:
            entry["step"] = node.step
        if node.plate is not None:
            entry["plate"] = node.plate
        if node.is_exogenous:
            entry["prior"] = node.prior.to_dict()
        else:
            eq = node.equation
            if eq.name == "custom":
                raise GraphError(f"node {nid!r} uses an unregistered equation; it cannot be serialised")
            entry["equation"] = {"name": eq.name, "inputs": list(eq.inputs), "params": _plain(eq.params)}
        nodes.append(entry)
    return {"plates": dict(graph.plates), "nodes": nodes}


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise GraphError(f"equation parameter {obj!r} is not JSON-serialisable")


def graph_from_dict(spec: Mapping) -> ScmGraph:
    """Inverse of :func:`graph_to_dict`."""
    nodes = []
    for i, entry in enumerate(spec.get("nodes", [])):
        name = entry.get("name")
        if not isinstance(name, str):
            raise GraphError(f"nodes[{i}]: missing name")
        step, plate = entry.get("step"), entry.get("plate")
        if ("prior" in entry) == ("equation" in entry):
            raise GraphError(f"nodes[{i}] ({name}): give exactly one of prior / equation")
        if "prior" in entry:
            nodes.append(Node(name, prior=prior_from_dict(entry["prior"]), plate=plate, step=step))
        else:
            eq = entry["equation"]
            nodes.append(Node(name, equation=make_equation(eq["name"], eq.get("inputs", []), **eq.get("params", {})),
                              plate=plate, step=step))
    return ScmGraph(nodes, spec.get("plates", {}))


def dump_graph(graph: ScmGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_graph(path) -> ScmGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))
