import math

import numpy as np
import pytest
from scipy import integrate

from scmdyn.bandit import (
    BanditParams,
    build_bandit_scm,
    compare_policies_model_based,
    context_from_observation,
    flipped_policy,
    make_policy,
    policy_value,
)
from scmdyn.counterfactual import abduct
from scmdyn.errors import InvalidParamsError
from scmdyn.interventions import apply
from scmdyn.ope import value_model_based
from scmdyn.sampling import sample_worlds

# P(A = 1 | c), written out independently of the library
RULES = {
    "P1": lambda c: 0.25 if c > 0.5 else 0.75,
    "P2": lambda c: 0.1 if c > 0.75 else (0.9 if c < 0.25 else 0.5),
    "P3": lambda c: 1.0 if c <= 0.5 else 0.0,
    "P3-literal": lambda c: 1.0 if c > 0.5 else 0.0,
}


def oracle(rule, lo=-2.0, hi=3.0):
    """E[O] for U_c ~ U(lo, hi) by adaptive quadrature, split at the rule's kinks."""
    def f(c):
        p = rule(c)
        return (p * (1 - c) + (1 - p) * c) / (hi - lo)

    pts = [lo, 0.25, 0.5, 0.75, hi]
    return sum(integrate.quad(f, a, b, epsabs=1e-13)[0] for a, b in zip(pts[:-1], pts[1:]))


def test_quadrature_oracles_match_reference_values():
    assert oracle(RULES["P1"]) == pytest.approx(1.125, abs=1e-10)
    assert oracle(RULES["P2"]) == pytest.approx(1.49, abs=1e-10)
    assert oracle(RULES["P3"]) == pytest.approx(1.75, abs=1e-10)
    assert oracle(RULES["P3-literal"]) == pytest.approx(-0.75, abs=1e-10)


@pytest.mark.parametrize("pid", ["P1", "P2", "P3", "P3-literal"])
def test_library_quadrature_agrees(pid):
    assert policy_value(pid) == pytest.approx(oracle(RULES[pid]), abs=1e-9)


def test_model_based_values_within_four_se():
    reports = compare_policies_model_based(n=5000, seed=0)
    for rep, pid in zip(reports, ("P1", "P2", "P3")):
        assert abs(rep.mean - oracle(RULES[pid])) < 4 * rep.std_error
    assert reports[2].mean > reports[1].mean > reports[0].mean
    assert reports[2].metadata["policy_form"].startswith("argmax")


@pytest.mark.parametrize("pid", ["P1", "P2", "P3", "P3-literal"])
def test_outcome_range(pid):
    w = sample_worlds(apply(make_policy(pid).intervention, build_bandit_scm()), 5000, seed=1)
    assert w["O"].min() >= -2.0 and w["O"].max() <= 3.0


@pytest.mark.parametrize("pid", ["P1", "P2", "P3"])
def test_flip_symmetry(pid):
    g = build_bandit_scm()
    a = value_model_based(g, make_policy(pid).intervention, "O", 5000, seed=2)
    b = value_model_based(g, flipped_policy(pid).intervention, "O", 5000, seed=3)
    assert abs(a.mean + b.mean - 1.0) < 4 * math.hypot(a.std_error, b.std_error)
    assert policy_value(pid) + policy_value(flipped_policy(pid)) == pytest.approx(1.0, abs=1e-9)


def test_stochastic_policy_frequencies():
    w = sample_worlds(apply(make_policy("P2").intervention, build_bandit_scm()), 20_000, seed=4)
    c, a = w["U_c"], w["A"]
    for mask, p in ((c < 0.25, 0.9), ((c > 0.25) & (c < 0.75), 0.5), (c > 0.75, 0.1)):
        assert abs(a[mask].mean() - p) < 4 * math.sqrt(p * (1 - p) / mask.sum())


def test_context_recovered_from_action_and_outcome():
    w = sample_worlds(apply(make_policy("P1").intervention, build_bandit_scm()), 1000, seed=5)
    np.testing.assert_allclose(context_from_observation(w)["U_c"], w["U_c"], atol=1e-12)


def test_abduction_pins_context_and_brackets_action_noise():
    g = apply(make_policy("P1").intervention, build_bandit_scm())
    w = sample_worlds(g, 50, seed=6)
    post = abduct(g, w.restrict(["A", "O"]))
    for i in range(50):
        assert post.region("U_c", i).value == pytest.approx(w["U_c"][i], abs=1e-12)
        region = post.region("U_a", i)
        assert region.lo <= w["U_a"][i] <= region.hi


def test_confounded_density_oracle():
    params = BanditParams(sigma=1.0, confounded=True)
    # U_c ~ U(0, 1), U_h ~ U(-3, 3), c = U_c + U_h
    def f(h, u):
        c = u + h
        p = RULES["P3"](c)
        return (p * (1 - c) + (1 - p) * c) / 6.0

    truth = integrate.dblquad(f, 0.0, 1.0, -3.0, 3.0, epsabs=1e-11)[0]
    assert policy_value("P3", params) == pytest.approx(truth, abs=1e-7)


def test_omitted_hidden_model_is_unconfounded():
    omitted = BanditParams(sigma=1.0, confounded=True, omit_hidden=True)
    plain = BanditParams(sigma=1.0)
    for pid in ("P1", "P2", "P3"):
        assert policy_value(pid, omitted) == pytest.approx(policy_value(pid, plain), abs=1e-12)
    w = sample_worlds(build_bandit_scm(omitted), 100, seed=0)
    assert (w["U_h"] == 0).all()


def test_params_validation():
    with pytest.raises(InvalidParamsError):
        BanditParams(sigma=0)
    with pytest.raises(InvalidParamsError):
        BanditParams(prior_family="cauchy")
    with pytest.raises(InvalidParamsError):
        make_policy("P9")
