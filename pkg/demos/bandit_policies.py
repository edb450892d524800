"""Model-based values of the three bandit policies against their quadrature truth.

Run: python demos/bandit_policies.py
"""

from scmdyn.bandit import compare_policies_model_based, policy_value


def main():
    for pid, rep in zip(("P1", "P2", "P3"), compare_policies_model_based(n=5000, seed=20200101)):
        print(f"{pid}: MB {rep.mean:.4f} +- {rep.std_error:.4f}   quadrature {policy_value(pid):.4f}")
    # the policy as printed picks the worse arm everywhere
    print(f"P3-literal: quadrature {policy_value('P3-literal'):.4f}")


if __name__ == "__main__":
    main()
