"""Structural equations and the abduction constraints they can emit.

An equation is a vectorised, pure function of its input arrays. Inputs of a
plated node arrive with a leading world axis and a trailing plate axis; inputs
from outside the plate are expanded to ``(n, 1)`` so ordinary broadcasting
applies. Reduction equations receive their inputs unexpanded and collapse the
plate axis themselves.

Equations that can be inverted for their exogenous inputs carry an ``abduct``
hook. The hook receives the observed output and the currently known input
values (``None`` when unknown) and returns constraints on the noise inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from .errors import EquationDomainError, InvalidParamsError

VALUE_KINDS = ("real", "binary", "integer")


@dataclass(frozen=True)
class PointMass:
    """The noise equals ``value`` wherever ``where`` is true."""

    value: Any
    where: Any = True


@dataclass(frozen=True)
class Interval:
    """The noise lies in ``[lo, hi]`` (ends optionally open) wherever ``where`` is true."""

    lo: Any
    hi: Any
    lo_open: Any = False
    hi_open: Any = False
    where: Any = True


AbductHook = Callable[[np.ndarray, Mapping[str, Any]], Mapping[str, Any]]


@dataclass(frozen=True, eq=False)
class Equation:
    """A deterministic mechanism ``value = fn(*inputs)``.

    ``name`` and ``params`` identify registered equations; two registered
    equations with equal name, inputs and params compare equal. Ad-hoc
    equations (``name="custom"``) compare by function identity.
    """

    inputs: tuple
    fn: Callable[..., Any]
    kind: str = "real"
    name: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)
    reduce: bool = False
    abduct: AbductHook | None = None

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind not in VALUE_KINDS:
            raise InvalidParamsError(f"unknown value kind {self.kind!r}")

    def __call__(self, *args):
        return self.fn(*args)

    def _key(self):
        if self.name == "custom":
            return ("custom", self.inputs, self.kind, self.reduce, id(self.fn))
        from .graph import stable_repr

        return (self.name, self.inputs, self.kind, self.reduce, stable_repr(self.params))

    def __eq__(self, other):
        if not isinstance(other, Equation):
            return NotImplemented
        return self is other or self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def rename_inputs(self, mapping: Mapping[str, str]) -> "Equation":
        """Same mechanism reading renamed inputs."""
        return Equation(
            tuple(mapping.get(i, i) for i in self.inputs),
            self.fn,
            self.kind,
            self.name,
            self.params,
            self.reduce,
            _rename_hook(self.abduct, mapping) if self.abduct else None,
        )

    def describe(self) -> str:
        if self.name == "custom":
            return f"{getattr(self.fn, '__name__', 'fn')}({', '.join(self.inputs)})"
        return f"{self.name}({', '.join(self.inputs)})"


def _rename_hook(hook, mapping):
    inverse = {v: k for k, v in mapping.items()}

    def renamed(output, known):
        original = {inverse.get(k, k): v for k, v in known.items()}
        return {mapping.get(k, k): c for k, c in hook(output, original).items()}

    return renamed


_REGISTRY: dict[str, Callable[..., Equation]] = {}


def register_equation(name: str):
    """Register an equation factory ``factory(inputs, **params) -> Equation``."""

    def deco(factory):
        if name in _REGISTRY:
            raise ValueError(f"equation {name!r} already registered")
        _REGISTRY[name] = factory
        return factory

    return deco


def make_equation(name: str, inputs, **params) -> Equation:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise InvalidParamsError(f"no registered equation named {name!r}") from None
    return factory(tuple(inputs), **params)


def registered_equations() -> list[str]:
    return sorted(_REGISTRY)


# --- generic registered mechanisms -----------------------------------------


@register_equation("constant")
def constant(inputs=(), value=0, kind="real") -> Equation:
    if inputs:
        raise InvalidParamsError("constant equations take no inputs")
    if kind == "binary" and value not in (0, 1):
        raise InvalidParamsError(f"binary constant must be 0 or 1, got {value!r}")
    dtype = np.float64 if kind == "real" else np.int64
    const = np.asarray(value, dtype=dtype)
    return Equation((), lambda: const, kind, "constant", {"value": value, "kind": kind})


@register_equation("identity")
def identity(inputs, kind="real") -> Equation:
    (src,) = inputs

    def abduct(output, known):
        return {src: PointMass(output)}

    return Equation(inputs, lambda x: x, kind, "identity", {"kind": kind}, abduct=abduct)


@register_equation("affine")
def affine(inputs, weights=None, bias=0.0) -> Equation:
    weights = tuple(float(w) for w in (weights if weights is not None else [1.0] * len(inputs)))
    if len(weights) != len(inputs):
        raise InvalidParamsError("affine: one weight per input required")
    bias = float(bias)

    def fn(*xs):
        out = bias
        for w, x in zip(weights, xs):
            out = out + w * np.asarray(x, dtype=np.float64)
        return out

    def abduct(output, known):
        # solvable for a single unknown input with nonzero weight
        unknown = [i for i, name in enumerate(inputs) if known.get(name) is None]
        if len(unknown) != 1 or weights[unknown[0]] == 0:
            return {}
        k = unknown[0]
        rest = output - bias
        for i, name in enumerate(inputs):
            if i != k:
                rest = rest - weights[i] * known[name]
        return {inputs[k]: PointMass(rest / weights[k])}

    return Equation(inputs, fn, "real", "affine", {"weights": weights, "bias": bias}, abduct=abduct)


@register_equation("cpt")
def cpt(inputs, table=None) -> Equation:
    """Binary node ``1(U < p[parents])`` with the noise ``U`` as the last input.

    ``table`` maps parent bit-strings (``""`` for no parents, ``"01"`` for
    parents 0 and 1 respectively) to ``P(node = 1 | parents)``.
    """
    if not inputs:
        raise InvalidParamsError("cpt needs at least the noise input")
    parents, noise = inputs[:-1], inputs[-1]
    k = len(parents)
    probs = np.zeros(2**k)
    table = dict(table or {})
    for idx in range(2**k):
        bits = format(idx, f"0{k}b") if k else ""
        if bits not in table:
            raise InvalidParamsError(f"cpt table missing row {bits!r}")
        p = float(table[bits])
        if not 0.0 <= p <= 1.0:
            raise InvalidParamsError(f"cpt probability out of range: {p}")
        probs[idx] = p

    def row_prob(pa):
        idx = 0
        for x in pa:
            idx = idx * 2 + np.asarray(x, dtype=np.int64)
        return probs[idx]

    def fn(*args):
        *pa, u = args
        return (np.asarray(u) < row_prob(pa)).astype(np.int64)

    def abduct(output, known):
        pa = [known.get(p) for p in parents]
        if any(v is None for v in pa):
            return {}
        p = row_prob(pa)
        one = np.asarray(output) == 1
        # output 1 <=> U < p ; output 0 <=> U >= p
        return {noise: Interval(np.where(one, 0.0, p), np.where(one, p, 1.0), hi_open=one)}

    return Equation(inputs, fn, "binary", "cpt", {"table": dict(sorted(table.items()))}, abduct=abduct)


@register_equation("not")
def logical_not(inputs) -> Equation:
    return Equation(inputs, lambda x: 1 - np.asarray(x, dtype=np.int64), "binary", "not")


@register_equation("and")
def logical_and(inputs) -> Equation:
    return Equation(inputs, lambda *xs: np.logical_and.reduce([np.asarray(x) for x in xs]).astype(np.int64), "binary", "and")


@register_equation("or")
def logical_or(inputs) -> Equation:
    return Equation(inputs, lambda *xs: np.logical_or.reduce([np.asarray(x) for x in xs]).astype(np.int64), "binary", "or")


@register_equation("xor")
def logical_xor(inputs) -> Equation:
    return Equation(inputs, lambda *xs: (sum(np.asarray(x, dtype=np.int64) for x in xs) % 2), "binary", "xor")


@register_equation("greater")
def greater(inputs, threshold=0.0) -> Equation:
    (src,) = inputs
    threshold = float(threshold)
    return Equation(inputs, lambda x: (np.asarray(x) > threshold).astype(np.int64), "binary", "greater", {"threshold": threshold})


@register_equation("plate_mean")
def plate_mean(inputs) -> Equation:
    """Average over the plate axis of each input, summed across inputs."""

    def fn(*xs):
        return sum(np.asarray(x, dtype=np.float64).mean(axis=-1) for x in xs)

    return Equation(inputs, fn, "real", "plate_mean", reduce=True)


@register_equation("plate_sum")
def plate_sum(inputs) -> Equation:
    def fn(*xs):
        return sum(np.asarray(x, dtype=np.float64).sum(axis=-1) for x in xs)

    return Equation(inputs, fn, "real", "plate_sum", reduce=True)


def check_probability(p, what="probability"):
    """Raise :class:`EquationDomainError` unless every entry of ``p`` lies in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    bad = ~((p >= 0.0) & (p <= 1.0))
    if bad.any():
        raise EquationDomainError(f"{what} outside [0, 1]: {p[bad][:3].tolist()}")
    return p
