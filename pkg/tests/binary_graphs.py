"""Random all-binary SCMs and brute-force enumeration oracles for them.

Each node ``V{i}`` is ``1(U{i} < p[parents])`` with ``U{i} ~ U(0, 1)``; parents
are drawn from earlier nodes. The oracles enumerate the joint table (for
interventional marginals) or the cells of the noise cube cut by every CPT
probability (for counterfactuals); neither touches the library's sampler or
abduction code.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np
from hypothesis import strategies as st

from scmdyn.equations import cpt
from scmdyn.graph import ScmGraph, endogenous, exogenous
from scmdyn.priors import Uniform

PROBS = st.sampled_from([0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9])


@dataclass(frozen=True)
class BinarySpec:
    parents: tuple  # parents[i] is a tuple of indices < i
    tables: tuple  # tables[i] maps parent bit-strings to P(V_i = 1 | parents)

    @property
    def k(self):
        return len(self.parents)

    def p_one(self, i, bits):
        key = "".join(str(int(bits[j])) for j in self.parents[i])
        return self.tables[i][key]


@st.composite
def binary_specs(draw, max_nodes=5, max_parents=2):
    k = draw(st.integers(1, max_nodes))
    parents, tables = [], []
    for i in range(k):
        pa = tuple(sorted(draw(st.sets(st.integers(0, i - 1), max_size=min(i, max_parents))))) if i else ()
        table = {"".join(bits): draw(PROBS) for bits in product("01", repeat=len(pa))}
        parents.append(pa)
        tables.append(table)
    return BinarySpec(tuple(parents), tuple(tables))


def build(spec: BinarySpec) -> ScmGraph:
    nodes = []
    for i in range(spec.k):
        nodes.append(exogenous(f"U{i}", Uniform(0.0, 1.0)))
        inputs = tuple(f"V{j}" for j in spec.parents[i]) + (f"U{i}",)
        nodes.append(endogenous(f"V{i}", cpt(inputs, spec.tables[i])))
    return ScmGraph(nodes)


def _forward(spec, u, fixed):
    bits = {}
    for i in range(spec.k):
        bits[i] = fixed[i] if i in fixed else int(u[i] < spec.p_one(i, bits))
    return bits


def interventional_marginals(spec: BinarySpec, fixed: dict) -> np.ndarray:
    """``P(V_i = 1)`` for all ``i`` in the mutilated graph, by summing the joint table."""
    marg = np.zeros(spec.k)
    for combo in product((0, 1), repeat=spec.k):
        if any(combo[i] != v for i, v in fixed.items()):
            continue
        prob = 1.0
        for i in range(spec.k):
            if i in fixed:
                continue
            p = spec.p_one(i, combo)
            prob *= p if combo[i] else 1.0 - p
        marg += prob * np.array(combo)
    return marg


def counterfactual_marginals(spec: BinarySpec, observed: dict, fixed: dict):
    """Exact ``P(V_i' = 1 | observed)`` under ``do(fixed)``, by enumerating noise cells.

    Returns ``None`` when the observation has probability zero.
    """
    cells = []
    for i in range(spec.k):
        cuts = sorted({0.0, 1.0, *spec.tables[i].values()})
        cells.append([(lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:])])
    total, acc = 0.0, np.zeros(spec.k)
    for combo in product(*cells):
        u = [(lo + hi) / 2 for lo, hi in combo]
        weight = float(np.prod([hi - lo for lo, hi in combo]))
        fact = _forward(spec, u, {})
        if any(fact[i] != v for i, v in observed.items()):
            continue
        cf = _forward(spec, u, fixed)
        total += weight
        acc += weight * np.array([cf[i] for i in range(spec.k)])
    return None if total == 0 else acc / total
