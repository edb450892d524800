import json

import pytest
from hypothesis import given

from binary_graphs import binary_specs, build
from scmdyn.bandit import BanditParams, build_bandit_scm
from scmdyn.equations import Equation, affine
from scmdyn.errors import GraphError
from scmdyn.graph import ScmGraph, endogenous, exogenous
from scmdyn.lending import LendingParams, build_lending_scm, default_groups
from scmdyn.priors import Gaussian, Uniform
from scmdyn.sampling import sample_worlds
from scmdyn.serialize import dump_graph, graph_from_dict, graph_to_dict, load_graph


def through_json(graph):
    return graph_from_dict(json.loads(json.dumps(graph_to_dict(graph))))


@given(binary_specs())
def test_binary_graphs_round_trip(spec):
    g = build(spec)
    back = through_json(g)
    assert back == g and back.fingerprint == g.fingerprint
    assert sample_worlds(back, 50, seed=1) == sample_worlds(g, 50, seed=1)


def test_int_and_float_parameters_fingerprint_alike():
    assert Uniform(0, 1) == Uniform(0.0, 1.0)
    a = ScmGraph([exogenous("U", Uniform(0, 1))])
    b = ScmGraph([exogenous("U", Uniform(0.0, 1.0))])
    assert a.fingerprint == b.fingerprint


def test_bandit_graph_round_trips_through_file(tmp_path):
    g = build_bandit_scm(BanditParams(sigma=1.0, confounded=True))
    dump_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back == g and back.fingerprint == g.fingerprint


def test_linear_graph_round_trip():
    g = ScmGraph([
        exogenous("U", Gaussian(0, 2)),
        endogenous("X", affine(("U",), weights=(3.0,), bias=1.0)),
    ])
    assert through_json(g) == g


def test_custom_equation_is_rejected():
    g = ScmGraph([exogenous("U", Uniform()), endogenous("X", Equation(("U",), lambda u: u * 2))])
    with pytest.raises(GraphError, match="X"):
        graph_to_dict(g)


def test_object_parameters_are_rejected():
    # the lending equations close over a group model, which has no JSON form
    g = build_lending_scm(default_groups(), LendingParams(n_units=10))
    with pytest.raises(GraphError, match="JSON"):
        graph_to_dict(g)


@pytest.mark.parametrize(
    "spec",
    [
        {"nodes": [{"prior": {"family": "uniform"}}]},
        {"nodes": [{"name": "U"}]},
        {"nodes": [{"name": "U", "prior": {"family": "uniform"}, "equation": {"name": "identity"}}]},
    ],
)
def test_malformed_specs(spec):
    with pytest.raises(GraphError):
        graph_from_dict(spec)
