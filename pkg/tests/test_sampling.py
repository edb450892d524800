import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from binary_graphs import binary_specs, build, interventional_marginals
from scmdyn.equations import affine, identity
from scmdyn.errors import IncompleteExogenousError, InsufficientSamplesError
from scmdyn.graph import ScmGraph, endogenous, exogenous
from scmdyn.priors import Gaussian, Uniform
from scmdyn.sampling import estimate, evaluate, query_samples, sample_worlds
from scmdyn.world import World, WorldBatch, worlds_to_csv


def plated():
    return ScmGraph([
        exogenous("U", Gaussian(0, 1)),
        exogenous("V", Uniform(0, 1), plate="unit"),
        endogenous("X", affine(("U", "V"), weights=(2.0, 1.0)), plate="unit"),
    ], {"unit": 3})


def test_sampling_is_bit_reproducible():
    g = plated()
    assert sample_worlds(g, 500, seed=3) == sample_worlds(g, 500, seed=3)
    assert sample_worlds(g, 500, seed=3) != sample_worlds(g, 500, seed=4)


@given(st.integers(1, 97), st.integers(1, 4))
def test_sampling_independent_of_chunking_and_jobs(chunk, jobs):
    g = plated()
    ref = sample_worlds(g, 200, seed=9)
    assert sample_worlds(g, 200, seed=9, jobs=jobs, chunk=chunk) == ref
    np.testing.assert_array_equal(query_samples(g, lambda w: w["X"][:, 0], 200, 9, jobs=jobs, chunk=chunk),
                                  ref["X"][:, 0])


def test_every_world_replays():
    g = plated()
    worlds = sample_worlds(g, 50, seed=1)
    for w in worlds:
        assert evaluate(g, w.restrict(g.exogenous_ids)) == w
    assert evaluate(g, worlds) == worlds


def test_unplated_inputs_broadcast_over_plate():
    g = plated()
    w = sample_worlds(g, 4, seed=0)
    np.testing.assert_array_equal(w["X"], 2.0 * w["U"][:, None] + w["V"])


def test_incomplete_exogenous():
    g = plated()
    with pytest.raises(IncompleteExogenousError):
        evaluate(g, {"U": np.zeros(2)})
    with pytest.raises(IncompleteExogenousError):
        evaluate(g, {"U": np.zeros(2), "V": np.zeros((2, 5))})


def test_estimate_needs_two_worlds():
    g = plated()
    with pytest.raises(InsufficientSamplesError):
        estimate(g, "U", 1, 0)


def test_estimate_covers_known_mean():
    g = ScmGraph([exogenous("U", Uniform(-2, 3)), endogenous("X", identity(("U",)))])
    est = estimate(g, "X", 20_000, seed=2)
    assert abs(est.mean - 0.5) < 4 * est.std_error
    assert math.isclose(est.std_error, math.sqrt(25 / 12 / 20_000), rel_tol=0.05)


def test_estimate_drops_undefined_values():
    g = ScmGraph([exogenous("U", Uniform(0, 1)), endogenous("X", identity(("U",)))])
    est = estimate(g, lambda w: np.where(w["X"] < 0.5, w["X"], np.nan), 1000, seed=0)
    assert 400 < est.n_used < 600


@given(binary_specs())
def test_observational_marginals_match_enumeration(spec):
    g = build(spec)
    n = 4000
    worlds = sample_worlds(g, n, seed=0)
    truth = interventional_marginals(spec, {})
    for i in range(spec.k):
        se = math.sqrt(max(truth[i] * (1 - truth[i]), 1e-12) / n)
        assert abs(worlds[f"V{i}"].mean() - truth[i]) < 4.5 * se


def test_world_csv_long_format():
    g = plated()
    text = worlds_to_csv(sample_worlds(g, 2, seed=0), graph=g)
    lines = text.splitlines()
    assert lines[0] == "world_id,step,plate_index,node_id,value"
    assert len(lines) == 1 + 2 * (1 + 3 + 3)
    assert lines[1].startswith("0,,,U,")
    assert lines[2].startswith("0,,0,V,")


def test_world_batch_indexing():
    wb = WorldBatch({"a": np.arange(5)}, np.arange(10, 15))
    assert isinstance(wb[1], World) and wb[1].world_id == 11
    assert wb[-1]["a"] == 4
    assert len(wb[1:3]) == 2
    with pytest.raises(IndexError):
        wb[5]
    assert WorldBatch.from_worlds(list(wb)) == wb
