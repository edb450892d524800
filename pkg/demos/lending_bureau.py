"""Threshold lending policies under a credit bureau that floors scores at 600.

Run: python demos/lending_bureau.py
"""

from scmdyn.lending import LendingParams, bureau_experiment, build_lending_scm, default_groups, evaluate_lending_policy


def main():
    groups, params = default_groups(), LendingParams()
    exp = bureau_experiment(groups, params, n=20, seed=20200104)
    base = evaluate_lending_policy(build_lending_scm(groups, params), None, None, 20, 20200104)["profit"].mean
    print(f"no intervention (MaxProf bank): profit {base:.3f}")
    print(f"{'criterion':>9} {'tau':>12} {'profit':>8} {'vs base':>8} {'E[d_0]':>8} {'E[d_1]':>8}")
    for row in exp.rows:
        tau = f"({row['tau_0']:.0f}, {row['tau_1']:.0f})"
        print(f"{row['criterion']:>9} {tau:>12} {row['E_U']:8.3f} {row['E_U'] - base:+8.3f} "
              f"{row['E_delta_0']:8.1f} {row['E_delta_1']:8.1f}")


if __name__ == "__main__":
    main()
