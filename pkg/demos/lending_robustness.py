"""How much the EqOpp policy's evaluation moves when p(Y | X, A) is replaced by p(Y | X).

``thresholds``: thresholds recomputed from the group-blind repayment curve.
``outcomes``: correct thresholds, outcomes drawn from the group-blind curve.

Run: python demos/lending_robustness.py
"""

from scmdyn.lending import LendingParams, default_groups, robustness_sweep


def main():
    rows = robustness_sweep(default_groups(), LendingParams(), (1, 2, 3, 4, 5), ("thresholds", "outcomes"), n=30,
                            seed=20200105)
    print(f"{'steps':>5} {'variant':>10} {'profit':>8} {'delta_0':>8} {'delta_1':>8}")
    for steps in range(1, 6):
        for variant in ("thresholds", "outcomes"):
            s = {r["estimand"]: r["sensitivity"] for r in rows if r["steps"] == steps and r["variant"] == variant}
            print(f"{steps:>5} {variant:>10} {s['profit']:8.4f} {s['delta_0']:8.2f} {s['delta_1']:8.2f}")


if __name__ == "__main__":
    main()
