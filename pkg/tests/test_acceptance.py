"""Acceptance criteria, one test per criterion.

Each test records PASS or FAIL with a one-line summary; the lines are printed
in the pytest terminal summary (see conftest.py) and at the end of a direct
``python tests/test_acceptance.py`` run.
"""

import contextlib
import dataclasses
import math
import time

import numpy as np
from scipy import stats

from binary_graphs import BinarySpec, build, interventional_marginals
from scmdyn.bandit import build_bandit_scm, compare_ope_methods, compare_policies_model_based, context_from_observation, make_policy
from scmdyn.counterfactual import counterfactual_batch, replay
from scmdyn.interventions import Atomic, apply, compose
from scmdyn.lending import (
    LendingParams,
    ThresholdPolicy,
    bureau_experiment,
    build_lending_scm,
    compute_thresholds,
    credit_bureau_intervention,
    default_groups,
    evaluate_lending_policy,
    robustness_sweep,
)
from scmdyn.ope import importance_weights, log_dataset, value_counterfactual, value_importance_sampling, value_model_based
from scmdyn.sampling import evaluate, sample_worlds
from test_bandit import RULES, oracle
from test_lending import _rate, _tpr

RESULTS = {}
NAMES = {
    1: "bandit MB values vs quadrature",
    2: "policy ordering P3 > P2 > P1",
    3: "CF equals MB without mismatch",
    4: "mismatch sweep robustness",
    5: "IS properties",
    6: "lending invariants at N=1e5",
    7: "credit bureau experiment",
    8: "robustness experiment",
    9: "engine properties",
}


@contextlib.contextmanager
def criterion(k):
    """Record PASS/FAIL for criterion ``k``; the body appends details to the yielded list."""
    details = []
    t0 = time.perf_counter()
    try:
        yield details
    except BaseException as exc:
        RESULTS[k] = ("FAIL", f"{'; '.join(details)}; {type(exc).__name__}: {exc}".strip("; "))
        raise
    RESULTS[k] = ("PASS", "; ".join(details + [f"{time.perf_counter() - t0:.1f}s"]))


def summary_lines():
    return [f"criterion {k} ({NAMES[k]}): {RESULTS[k][0]}  {RESULTS[k][1]}" for k in sorted(RESULTS)]


def target_prob(policy):
    def prob(worlds):
        return {"A": policy.action_prob(context_from_observation(worlds), worlds["A"])}

    return prob


# --- bandit -----------------------------------------------------------------------


def test_criterion_1_bandit_model_based_values():
    with criterion(1) as log:
        t0 = time.perf_counter()
        reports = compare_policies_model_based(n=5000, seed=20200101)
        elapsed = time.perf_counter() - t0
        for rep, pid in zip(reports, ("P1", "P2", "P3")):
            truth = oracle(RULES[pid])
            z = (rep.mean - truth) / rep.std_error
            log.append(f"{pid}={rep.mean:.4f} (truth {truth:.4f}, z={z:+.2f})")
            assert abs(z) < 4, pid
        log.append(f"MB runtime {elapsed:.2f}s")
        assert elapsed < 5


def test_criterion_2_policy_ordering():
    with criterion(2) as log:
        v = [r.mean for r in compare_policies_model_based(n=5000, seed=20200101)]
        log.append(" < ".join(f"{p}={x:.3f}" for p, x in zip(("P1", "P2", "P3"), v)))
        assert v[2] > v[1] > v[0]


def test_criterion_3_counterfactual_equals_model_based():
    with criterion(3) as log:
        t0 = time.perf_counter()
        g = build_bandit_scm()
        behavior = make_policy("P1")
        logging_model = apply(behavior.intervention, g)
        for pid in ("P1", "P2", "P3"):
            target = make_policy(pid)
            diffs, ses = [], []
            for trial in range(50):
                data = log_dataset(g, behavior, 5000, 1000 + trial, ("A", "O"))
                cf = value_counterfactual(logging_model, data, target.intervention, "O", 10, 2000 + trial)
                mb = value_model_based(g, target.intervention, "O", 5000, 3000 + trial)
                diffs.append(cf.mean - mb.mean)
                ses.append(math.hypot(cf.std_error, mb.std_error))
            diffs, ses = np.array(diffs), np.array(ses)
            mean_abs, bias_se = np.abs(diffs).mean(), diffs.std(ddof=1) / math.sqrt(len(diffs))
            log.append(f"{pid}: mean|CF-MB|={mean_abs:.4f} vs 4*SE={4 * ses.mean():.4f}, "
                       f"mean(CF-MB)={diffs.mean():+.4f} (se {bias_se:.4f})")
            assert mean_abs < 4 * ses.mean(), pid
            assert abs(diffs.mean()) < 4 * bias_se, pid
        assert time.perf_counter() - t0 < 120


def test_criterion_4_mismatch_sweep():
    with criterion(4) as log:
        t0 = time.perf_counter()
        res = compare_ope_methods("mismatch", seed=20200102)
        elapsed = time.perf_counter() - t0
        mae = res.mae()
        log.append(f"{len(res.rows)} rows; " + ", ".join(f"MAE[{m}]={v[0]:.4f}" for m, v in sorted(mae.items())))
        assert len(res.rows) == 216
        assert mae["CF"][0] <= mae["MB"][0]
        assert mae["IS"][0] > mae["CF"][0]
        # IS ignores the model, so under a stochastic behaviour policy its error is sampling noise;
        # the deterministic P3 logs give no overlap with other targets
        z = {b: np.array([r["abs_error"] / r["std_error"] for r in res.rows if r["method"] == "IS" and r["behavior"] == b])
             for b in ("P1", "P2", "P3")}
        covered = np.concatenate([z["P1"], z["P2"]])
        log.append(f"IS |error|/se with P1/P2 logs: max {covered.max():.2f}; with P3 logs: max {z['P3'].max():.1f}")
        assert covered.max() < 4
        assert elapsed < 600


def test_criterion_5_importance_sampling():
    with criterion(5) as log:
        for pid in ("P1", "P2", "P3"):
            data = log_dataset(build_bandit_scm(), make_policy(pid), 5000, 7, ("A", "O"))
            assert (importance_weights(data, target_prob(make_policy(pid))) == 1.0).all()
        log.append("target==behavior weights all exactly 1")
        logs = log_dataset(build_bandit_scm(), make_policy("P1"), 5000, 20200103, ("A", "O"))
        rep = value_importance_sampling(logs, target_prob(make_policy("P3")), "O")
        z = (rep.mean - 1.75) / rep.std_error
        log.append(f"IS P3 from P1 logs={rep.mean:.4f} (se {rep.std_error:.4f}, z={z:+.2f})")
        assert abs(z) < 4


# --- lending ----------------------------------------------------------------------


def test_criterion_6_lending_invariants():
    with criterion(6) as log:
        t0 = time.perf_counter()
        groups = default_groups()
        params = LendingParams(n_units=100_000, steps=2, clamp_scores=False)
        g = build_lending_scm(groups, params)
        w = sample_worlds(g, 1, seed=6)
        for t in range(params.steps):
            off = w[f"T@{t}"] == 0
            assert (w[f"u@{t}"][off] == 0).all() and (w[f"X@{t + 1}"][off] == w[f"X@{t}"][off]).all()
            d = (w[f"X@{t + 1}"] - w[f"X@{t}"])[~off]
            assert np.isin(np.round(d, 9), [params.c_minus, params.c_plus]).all()
        log.append("no-loan invariance and score-change bounds hold")

        one = LendingParams(n_units=100_000)
        g1 = build_lending_scm(groups, one)
        base = sample_worlds(g1, 1, seed=6)
        for value in (0, 1):
            forced = sample_worlds(apply(Atomic("T", value), g1), 1, seed=6)
            assert (forced["Y@0"] == base["Y@0"]).all()
        log.append("Y unchanged by do(T)")

        x, a, y = base["X@0"][0], base["A"][0], base["Y@0"][0]
        zs = []
        for j in (0, 1):
            xs, ys = x[a == j], y[a == j]
            edges = np.quantile(xs, np.linspace(0, 1, 21))
            for lo, hi in zip(edges[1:-2], edges[2:-1]):
                m = (xs >= lo) & (xs < hi)
                p = groups.rho((lo + hi) / 2, j)
                zs.append((ys[m].mean() - p) / math.sqrt(p * (1 - p) / m.sum()))
        zmax = np.abs(zs).max()
        bound = stats.norm.isf(stats.norm.sf(4.0) / len(zs))
        log.append(f"calibration max|z|={zmax:.2f} over {len(zs)} bins (Bonferroni 4-sigma bound {bound:.2f})")
        assert zmax < bound

        tol = 1e-4
        dp, eo = compute_thresholds("DemPar", groups), compute_thresholds("EqOpp", groups)
        gap_dp = abs(_rate(groups.groups[0], dp.tau[0]) - _rate(groups.groups[1], dp.tau[1]))
        gap_eo = abs(_tpr(groups.groups[0], eo.tau[0]) - _tpr(groups.groups[1], eo.tau[1]))
        assert gap_dp <= tol + 1e-12 and gap_eo <= tol + 1e-6
        for crit, pol in (("DemPar", dp), ("EqOpp", eo)):
            ww = sample_worlds(apply(pol.intervention(), g1), 1, seed=6)
            aa, tt, yy = ww["A"][0], ww["T@0"][0], ww["Y@0"][0]
            sel = [(aa == j) if crit == "DemPar" else (aa == j) & (yy == 1) for j in (0, 1)]
            rates = [tt[m].mean() for m in sel]
            se = math.sqrt(sum(r * (1 - r) / m.sum() for r, m in zip(rates, sel)))
            log.append(f"{crit} population gap {gap_dp if crit == 'DemPar' else gap_eo:.1e}, "
                       f"simulated gap {abs(rates[0] - rates[1]):.4f} (se {se:.4f})")
            assert abs(rates[0] - rates[1]) <= tol + 4 * se
        assert time.perf_counter() - t0 < 60


def test_criterion_7_credit_bureau():
    with criterion(7) as log:
        t0 = time.perf_counter()
        groups, params = default_groups(), LendingParams()
        graph = build_lending_scm(groups, params)
        bureau = credit_bureau_intervention("floor", 600.0)
        for tau_black in (525.0, 550.0, 575.0, 590.0):
            for tau_white in (575.0, 640.0):
                rep = evaluate_lending_policy(graph, ThresholdPolicy((tau_black, tau_white)), bureau, n=10, seed=7)
                d = rep["delta_0"]
                log.append(f"tau=({tau_black:.0f},{tau_white:.0f}) E[delta_Black]={d.mean:.1f}")
                assert d.mean + 4 * d.std_error < 0
        exp = bureau_experiment(groups, params, ("DemPar", "EqOpp"), n=20, seed=20200104)
        base = evaluate_lending_policy(graph, None, None, 20, 20200104)["profit"].mean
        change = {r["criterion"]: r["E_U"] - base for r in exp.rows}
        log.append(f"profit change vs baseline: DemPar {change['DemPar']:+.3f}, EqOpp {change['EqOpp']:+.3f}")
        log.append(f"same-policy change: DemPar {exp.sensitivity('DemPar'):.3f}, EqOpp {exp.sensitivity('EqOpp'):.3f}")
        assert abs(change["DemPar"]) > abs(change["EqOpp"])
        assert time.perf_counter() - t0 < 120


def test_criterion_8_robustness():
    with criterion(8) as log:
        t0 = time.perf_counter()
        groups, params = default_groups(), LendingParams()
        rows = robustness_sweep(groups, params, (1, 2, 3, 4, 5), ("thresholds", "outcomes"), n=30, seed=20200105)
        eo = compute_thresholds("EqOpp", groups, params)
        for steps in range(1, 6):
            p = dataclasses.replace(params, steps=steps)
            profit = evaluate_lending_policy(build_lending_scm(groups, p, thresholds=eo.tau), eo, None, 30,
                                             20200105)["profit"].mean
            sel = {(r["variant"], r["estimand"]): r["sensitivity"] for r in rows if r["steps"] == steps}
            worst = max(sel[("thresholds", "profit")], sel[("outcomes", "profit")]) / abs(profit)
            outcome_wins = [sel[("outcomes", e)] > sel[("thresholds", e)] for e in ("delta_0", "delta_1")]
            log.append(f"step {steps}: profit ratio {worst:.3f}, delta_0 {sel[('outcomes', 'delta_0')]:.2f} "
                       f"vs {sel[('thresholds', 'delta_0')]:.2f}")
            assert worst < 0.10
            assert any(outcome_wins)
        assert time.perf_counter() - t0 < 300


# --- engine -----------------------------------------------------------------------


def random_spec(rng, k):
    parents, tables = [], []
    for i in range(k):
        pa = tuple(sorted(rng.choice(i, size=rng.integers(0, min(i, 2) + 1), replace=False).tolist())) if i else ()
        n_rows = 2 ** len(pa)
        keys = [format(r, f"0{len(pa)}b") if pa else "" for r in range(n_rows)]
        tables.append({key: float(rng.choice([0.1, 0.25, 0.4, 0.6, 0.75, 0.9])) for key in keys})
        parents.append(pa)
    return BinarySpec(tuple(parents), tuple(tables))


def test_criterion_9_engine_properties():
    with criterion(9) as log:
        lending = build_lending_scm(default_groups(), LendingParams(n_units=500, steps=2))
        a = sample_worlds(lending, 12, seed=9)
        assert a == sample_worlds(lending, 12, seed=9)
        assert a == sample_worlds(lending, 12, seed=9, jobs=4, chunk=5)
        assert evaluate(lending, a.restrict(lending.exogenous_ids)) == a
        again = replay(lending, a)
        for nid in lending.endogenous_ids:
            np.testing.assert_array_equal(again[nid], a[nid])
        for nid in lending.exogenous_ids:
            np.testing.assert_allclose(again[nid], a[nid], rtol=0, atol=1e-12)
        log.append("bit-identical reruns, jobs/chunk independent, exact replay")

        rng = np.random.default_rng(9)
        worst, graphs = 0.0, 0
        for k in range(1, 6):
            for _ in range(8):
                spec = random_spec(rng, k)
                g = build(spec)
                obs = sample_worlds(g, 200, seed=graphs)
                assert evaluate(g, obs.restrict(g.exogenous_ids)) == obs
                assert replay(g, obs).restrict(g.endogenous_ids) == obs.restrict(g.endogenous_ids)
                names = [f"V{i}" for i in range(k)]
                cf, idx, _ = counterfactual_batch(g, obs.restrict(names), None, 3, seed=graphs)
                for nm in names:
                    assert (cf[nm] == obs[nm][idx]).all()
                fixed = {int(i): int(rng.integers(0, 2)) for i in rng.choice(k, size=rng.integers(0, k + 1), replace=False)}
                iv = compose([Atomic(f"V{i}", v) for i, v in fixed.items()])
                n = 20_000
                w = sample_worlds(apply(iv, g) if fixed else g, n, seed=100 + graphs)
                truth = interventional_marginals(spec, fixed)
                for i in range(k):
                    se = math.sqrt(max(truth[i] * (1 - truth[i]), 1e-12) / n)
                    z = abs(w[f"V{i}"].mean() - truth[i]) / se if truth[i] * (1 - truth[i]) > 0 else 0.0
                    assert w[f"V{i}"].mean() == truth[i] or z < 4.5
                    worst = max(worst, z)
                graphs += 1
        log.append(f"{graphs} binary graphs (1-5 nodes): replay, null-CF consistency, "
                   f"truncated factorization max|z|={worst:.2f}")


if __name__ == "__main__":
    import sys

    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except Exception:  # noqa: BLE001
                pass
    print("\n".join(summary_lines()))
    sys.exit(0 if all(v[0] == "PASS" for v in RESULTS.values()) and len(RESULTS) == 9 else 1)
