"""Abduction of exogenous noise and counterfactual world generation.

Abduction walks the observed endogenous nodes and asks each mechanism's
``abduct`` hook which noise values are compatible with what was seen. The
result is exact: every noise instance ends up as a point mass, a truncated
prior over an interval, or its untouched prior.

When an observed node's hook cannot fire (say a parent is unobserved), the
per-node constraints are only necessary conditions. Draws are then taken from
the constrained prior and rejected until they reproduce the observations,
which is exact for any graph.

Counterfactual worlds are produced by sampling that posterior and evaluating
the intervened graph. A node whose mechanism and endogenous inputs are
unchanged from the factual world keeps its factual value, which removes the
floating-point drift of round-tripping through an inverse CDF.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import rng
from .equations import Interval, PointMass
from .errors import InconsistentObservationError
from .graph import ScmGraph
from .interventions import Intervention, apply
from .priors import NoisePrior, Uniform
from .sampling import compute_node, node_inputs
from .world import World, WorldBatch

PRIOR, POINT, TRUNCATED = 0, 1, 2
MAX_REJECTION_ROUNDS = 500


class Point(NamedTuple):
    value: float


class TruncatedUniform(NamedTuple):
    lo: float
    hi: float


class Truncated(NamedTuple):
    prior: NoisePrior
    lo: float
    hi: float


class Unconstrained(NamedTuple):
    prior: NoisePrior


def _world_any(mask):
    mask = np.asarray(mask)
    return mask.reshape(len(mask), -1).any(axis=1) if mask.ndim > 1 else mask


@dataclass
class NodePosterior:
    """Posterior over every instance of one exogenous node."""

    prior: NoisePrior
    state: np.ndarray
    value: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    lo_open: np.ndarray
    hi_open: np.ndarray

    @classmethod
    def unconstrained(cls, prior, shape):
        return cls(prior, np.zeros(shape, np.int8), np.zeros(shape), np.full(shape, -np.inf), np.full(shape, np.inf),
                   np.zeros(shape, bool), np.zeros(shape, bool))

    @property
    def shape(self):
        return self.state.shape

    def _b(self, x, dtype=None):
        return np.broadcast_to(np.asarray(x, dtype=dtype), self.shape)

    def _inside(self, v):
        above = np.where(self.lo_open, v > self.lo, v >= self.lo)
        below = np.where(self.hi_open, v < self.hi, v <= self.hi)
        return above & below

    def add(self, constraint) -> np.ndarray:
        """Fold in a constraint; returns the mask of instances made inconsistent."""
        where = self._b(constraint.where, bool)
        bad = np.zeros(self.shape, bool)
        if isinstance(constraint, PointMass):
            v = self._b(constraint.value, np.float64)
            clash_point = (self.state == POINT) & ~np.isclose(self.value, v, rtol=1e-12, atol=1e-12)
            clash_region = (self.state == TRUNCATED) & ~self._inside(v)
            bad |= where & (clash_point | clash_region)
            self.value = np.where(where, v, self.value)
            self.state = np.where(where, POINT, self.state).astype(np.int8)
        elif isinstance(constraint, Interval):
            lo, hi = self._b(constraint.lo, np.float64), self._b(constraint.hi, np.float64)
            lo_open, hi_open = self._b(constraint.lo_open, bool), self._b(constraint.hi_open, bool)
            is_point = self.state == POINT
            point_ok = np.where(lo_open, self.value > lo, self.value >= lo) & np.where(hi_open, self.value < hi, self.value <= hi)
            bad |= where & is_point & ~point_ok
            upd = where & ~is_point
            tighter_lo = (lo > self.lo) | ((lo == self.lo) & lo_open)
            tighter_hi = (hi < self.hi) | ((hi == self.hi) & hi_open)
            new_lo = np.where(upd & tighter_lo, lo, self.lo)
            new_lo_open = np.where(upd & tighter_lo, lo_open, self.lo_open)
            new_hi = np.where(upd & tighter_hi, hi, self.hi)
            new_hi_open = np.where(upd & tighter_hi, hi_open, self.hi_open)
            self.lo, self.hi, self.lo_open, self.hi_open = new_lo, new_hi, new_lo_open, new_hi_open
            self.state = np.where(upd, TRUNCATED, self.state).astype(np.int8)
            empty = (self.lo > self.hi) | ((self.lo == self.hi) & (self.lo_open | self.hi_open))
            bad |= upd & empty
        else:
            raise TypeError(f"unknown constraint {constraint!r}")
        return bad

    def finalize(self, check_support: bool) -> np.ndarray:
        """Resolve binary intervals and optionally check prior support."""
        bad = np.zeros(self.shape, bool)
        if self.prior.kind == "binary":
            trunc = self.state == TRUNCATED
            has0, has1 = self._inside(0.0), self._inside(1.0)
            bad |= trunc & ~has0 & ~has1
            only = trunc & (has0 ^ has1)
            self.value = np.where(only, np.where(has1, 1.0, 0.0), self.value)
            self.state = np.where(only, POINT, np.where(trunc & has0 & has1, PRIOR, self.state)).astype(np.int8)
        if check_support:
            pts = self.state == POINT
            bad |= pts & ~np.asarray(self.prior.contains(self.value), bool)
            trunc = self.state == TRUNCATED
            if trunc.any():
                mass = self.prior.cdf(self.hi) - self.prior.cdf(self.lo)
                bad |= trunc & ~(mass > 0)
        return bad

    def region(self, index):
        """Posterior of a single instance, e.g. ``region((world, unit))``."""
        s = int(self.state[index])
        if s == POINT:
            return Point(float(self.value[index]))
        if s == TRUNCATED:
            lo, hi = float(self.lo[index]), float(self.hi[index])
            if isinstance(self.prior, Uniform):
                return TruncatedUniform(max(lo, self.prior.lo), min(hi, self.prior.hi))
            return Truncated(self.prior, lo, hi)
        return Unconstrained(self.prior)

    def sample(self, u: np.ndarray) -> np.ndarray:
        """Map open-unit uniforms (same shape as the posterior) to noise draws."""
        out = np.asarray(self.prior.ppf(u), dtype=np.float64)
        out = np.where(self.state == POINT, self.value, out)
        trunc = self.state == TRUNCATED
        if trunc.any():
            lo, hi = self.lo, self.hi
            qlo, qhi = self.prior.cdf(lo), self.prior.cdf(hi)
            with np.errstate(invalid="ignore"):
                inner = np.asarray(self.prior.ppf(qlo + (qhi - qlo) * u), dtype=np.float64)
                span = np.where(np.isfinite(hi - lo), hi - lo, 0.0)
                fallback = np.where(np.isfinite(lo), lo, hi) + span * u
            x = np.where(qhi > qlo, inner, fallback)
            x = np.clip(x, lo, hi)
            x = np.where(self.lo_open & (x <= lo), np.nextafter(lo, np.inf), x)
            x = np.where(self.hi_open & (x >= hi), np.nextafter(hi, -np.inf), x)
            out = np.where(trunc, x, out)
        if self.prior.kind != "real":
            out = out.astype(np.int64)
        return out


class NoisePosterior:
    """Exact posterior over all exogenous node instances of a batch of worlds.

    ``consistent[i]`` is False when no noise value reproduces world ``i``.
    ``known`` holds every endogenous value fixed by the observations
    (observed directly or inferred through an invertible mechanism).
    ``exact`` is False when the per-node regions are only a proposal and draws
    must be checked against ``observed``.
    """

    def __init__(self, graph, nodes, consistent, known, world_ids, observed=None, exact=True):
        self.graph = graph
        self.nodes: dict[str, NodePosterior] = nodes
        self.consistent = consistent
        self.known = known
        self.world_ids = world_ids
        self.observed = observed or {}
        self.exact = exact

    def __getitem__(self, node_id) -> NodePosterior:
        return self.nodes[node_id]

    def __len__(self):
        return len(self.consistent)

    def region(self, node_id, world=0, index=None):
        idx = (world,) if index is None else (world, index)
        return self.nodes[node_id].region(idx)

    def take(self, idx) -> "NoisePosterior":
        idx = np.asarray(idx)
        nodes = {k: NodePosterior(p.prior, p.state[idx], p.value[idx], p.lo[idx], p.hi[idx], p.lo_open[idx], p.hi_open[idx])
                 for k, p in self.nodes.items()}
        return NoisePosterior(self.graph, nodes, self.consistent[idx], {k: v[idx] for k, v in self.known.items()},
                              self.world_ids[idx], {k: v[idx] for k, v in self.observed.items()}, self.exact)


def _as_batch(world) -> tuple[WorldBatch, bool]:
    if isinstance(world, World):
        return WorldBatch({k: np.asarray(v)[None, ...] for k, v in world.items()}, [world.world_id], world.seed,
                          world.fingerprint), True
    return world, False


def _hook_view(graph, nid, known):
    node = graph[nid]
    view = {}
    for inp in node.inputs:
        v = known.get(inp)
        if v is not None and not node.equation.reduce and node.plate is not None and graph[inp].plate is None:
            v = v[:, None]
        view[inp] = v
    return view


def abduct_batch(graph: ScmGraph, observed: WorldBatch, check_support: bool = False) -> NoisePosterior:
    """Posterior over exogenous noise for each world of ``observed``.

    Nodes missing from ``observed`` are treated as unobserved. Values of
    observed exogenous nodes, and of nodes with a zero-variance prior, become
    point masses.

    With ``check_support`` a noise value outside its prior's support marks the
    world inconsistent; by default the observation wins over the prior, which
    is what lets misspecified-prior models still replay logged data.
    """
    n = len(observed)
    known = {k: np.asarray(v) for k, v in observed.values.items() if k in graph}
    post = {nid: NodePosterior.unconstrained(graph[nid].prior, (n,) + graph.shape(nid)) for nid in graph.exogenous_ids}
    bad = np.zeros(n, bool)
    for nid in graph.exogenous_ids:
        if nid in known:
            bad |= _world_any(post[nid].add(PointMass(known[nid])))
        elif graph[nid].prior.var == 0:
            # a degenerate prior is known without observing it
            post[nid].add(PointMass(graph[nid].prior.ppf(np.full((n,) + graph.shape(nid), 0.5))))

    processed = set()
    changed = True
    while changed:
        changed = False
        for nid in reversed(graph.endogenous_ids):
            node = graph[nid]
            if nid in processed or nid not in known or node.equation.abduct is None:
                continue
            view = _hook_view(graph, nid, known)
            constraints = node.equation.abduct(known[nid], view) or {}
            if not constraints:
                continue
            processed.add(nid)
            changed = True
            for target, c in constraints.items():
                if target in post:
                    bad |= _world_any(post[target].add(c))
                elif target not in known and isinstance(c, PointMass) and np.all(c.where):
                    shape = (n,) + graph.shape(target)
                    known[target] = np.array(np.broadcast_to(c.value, shape), dtype=np.float64 if graph[target].kind == "real" else np.int64)
        for nid, p in post.items():
            if nid not in known and np.all(p.state == POINT):
                known[nid] = p.value.astype(np.int64) if p.prior.kind != "real" else p.value
                changed = True
        for nid in graph.endogenous_ids:
            if nid not in known and all(i in known for i in graph[nid].inputs):
                known[nid] = compute_node(graph, nid, known, n)
                changed = True

    for p in post.values():
        bad |= _world_any(p.finalize(check_support))
    observed_endo = {k: known_obs for k, known_obs in observed.values.items() if k in graph and not graph[k].is_exogenous}
    exact = all(nid in processed or all(i in known for i in graph[nid].inputs) for nid in observed_endo)
    posterior = NoisePosterior(graph, post, ~bad, known, observed.world_ids,
                               {k: np.asarray(v) for k, v in observed_endo.items()}, exact)
    if n:
        _, failed = _draw_checked(posterior, 1, seed=0, purpose="verify")
        posterior.consistent &= ~failed
    return posterior


def _matches(graph, noise, observed, n) -> np.ndarray:
    """Rows whose forward evaluation from ``noise`` reproduces ``observed``."""
    values = dict(noise)
    ok = np.ones(n, bool)
    for nid in graph.endogenous_ids:
        values[nid] = compute_node(graph, nid, values, n)
        if nid in observed:
            obs, got = observed[nid], values[nid]
            if graph[nid].kind == "real":
                same = np.isclose(got, obs, rtol=1e-9, atol=1e-9) | (np.isnan(got) & np.isnan(obs))
            else:
                same = got == obs
            ok &= ~_world_any(~same)
    return ok


def abduct(graph: ScmGraph, world, check_support: bool = False) -> NoisePosterior:
    """Posterior for a single world (or a batch); raises if any world is inconsistent."""
    batch, _ = _as_batch(world)
    post = abduct_batch(graph, batch, check_support)
    if not post.consistent.all():
        bad = batch.world_ids[~post.consistent]
        raise InconsistentObservationError(f"no noise value reproduces world(s) {bad[:5].tolist()}")
    return post


def _draw_checked(posterior: NoisePosterior, m: int, seed: int, purpose: str = "posterior"):
    """``m`` posterior draws per world (world-major, row = i * m + j) and the rows that failed.

    Every draw is pushed through the graph. Rows that miss the observations
    are redrawn from a fresh substream, at most ``MAX_REJECTION_ROUNDS``
    times; an exact posterior only fails on worlds it cannot reproduce at all.
    """
    n = len(posterior)
    rows = n * m
    virtual = (np.repeat(posterior.world_ids, m) * m + np.tile(np.arange(m), n)).astype(np.int64)
    reps, out = {}, {}
    for nid, p in posterior.nodes.items():
        reps[nid] = NodePosterior(p.prior, *(np.repeat(a, m, axis=0) for a in (p.state, p.value, p.lo, p.hi, p.lo_open, p.hi_open)))
        out[nid] = _sample_rows(reps[nid], seed, purpose, nid, virtual, None)
    observed = {k: np.repeat(v, m, axis=0) for k, v in posterior.observed.items()}
    pending = np.flatnonzero(~_matches(posterior.graph, out, observed, rows))
    rounds = 1 if posterior.exact else MAX_REJECTION_ROUNDS
    for attempt in range(1, rounds):
        if not pending.size:
            break
        for nid, rep in reps.items():
            out[nid][pending] = _sample_rows(rep, seed, purpose, nid, virtual, pending, attempt)
        sub = {k: v[pending] for k, v in out.items()}
        ok = _matches(posterior.graph, sub, {k: v[pending] for k, v in observed.items()}, len(pending))
        pending = pending[~ok]
    failed = np.zeros(rows, bool)
    failed[pending] = True
    return out, failed.reshape(n, m).any(axis=1) if n else np.zeros(0, bool)


def _sample_rows(rep: NodePosterior, seed, purpose, nid, virtual, rows, attempt=0):
    labels = (int(seed), purpose, nid) if attempt == 0 else (int(seed), purpose, nid, attempt)
    size = int(np.prod(rep.shape[1:])) if len(rep.shape) > 1 else 1
    ids = virtual if rows is None else virtual[rows]
    u = rng.uniforms_for_worlds(rng.stream_key(*labels), ids, size).reshape((len(ids),) + rep.shape[1:])
    if rows is not None:
        rep = NodePosterior(rep.prior, *(a[rows] for a in (rep.state, rep.value, rep.lo, rep.hi, rep.lo_open, rep.hi_open)))
    return rep.sample(u)


def _draw(posterior: NoisePosterior, m: int, seed: int, purpose: str = "posterior") -> dict:
    out, failed = _draw_checked(posterior, m, seed, purpose)
    if failed.any():
        bad = posterior.world_ids[failed]
        raise InconsistentObservationError(
            f"no posterior draw reproduced world(s) {bad[:5].tolist()} in {MAX_REJECTION_ROUNDS} rounds"
        )
    return out


def sample_posterior(posterior: NoisePosterior, m: int, seed: int) -> WorldBatch:
    """``m`` exogenous assignments per world; world ids are ``factual_id * m + j``."""
    n = len(posterior)
    virtual = (np.repeat(posterior.world_ids, m) * m + np.tile(np.arange(m), n)).astype(np.int64)
    return WorldBatch(_draw(posterior, m, seed), virtual, seed, posterior.graph.fingerprint)


def _evaluate_pinned(factual_graph, graph, noise, posterior, m) -> dict:
    n_rows = len(next(iter(noise.values()))) if noise else 0
    values = dict(noise)
    known = {k: np.repeat(v, m, axis=0) for k, v in posterior.known.items()}
    for nid in graph.endogenous_ids:
        computed = compute_node(graph, nid, values, n_rows)
        node = graph[nid]
        if nid in known and nid in factual_graph and factual_graph[nid] == node:
            same = np.ones(computed.shape, bool)
            for inp in node.inputs:
                src = graph[inp]
                if src.is_exogenous:
                    if factual_graph[inp] != src:
                        same[:] = False
                    continue
                if inp not in known:
                    same[:] = False
                    continue
                eq = values[inp] == known[inp]
                if node.equation.reduce or (node.plate is None and eq.ndim > 1):
                    eq = eq.reshape(len(eq), -1).all(axis=1)
                    eq = eq.reshape((len(eq),) + (1,) * (computed.ndim - 1))
                elif node.plate is not None and src.plate is None:
                    eq = eq[:, None]
                same &= np.broadcast_to(eq, computed.shape)
            computed = np.where(same, known[nid].astype(computed.dtype), computed)
        values[nid] = computed
    return {nid: values[nid] for nid in graph.order}


def counterfactual_batch(graph: ScmGraph, factual: WorldBatch, intervention: Intervention | None, m: int, seed: int,
                         check_support: bool = False, posterior: NoisePosterior | None = None):
    """Counterfactual worlds for every consistent factual world.

    Returns ``(worlds, factual_index, posterior)``. ``worlds`` holds ``m``
    draws per consistent factual world (world-major); ``factual_index[r]`` is
    the row in ``factual`` that draw ``r`` came from.
    """
    if posterior is None:
        posterior = abduct_batch(graph, factual, check_support)
    keep = np.flatnonzero(posterior.consistent)
    sub = posterior.take(keep)
    target = apply(intervention, graph)
    noise = _draw(sub, m, seed)
    # exogenous nodes whose prior the intervention replaced are drawn afresh
    for nid in target.exogenous_ids:
        if nid not in graph or graph[nid] != target[nid]:
            size = target.plate_size(nid)
            virtual = (np.repeat(sub.world_ids, m) * m + np.tile(np.arange(m), len(keep))).astype(np.int64)
            u = rng.uniforms_for_worlds(rng.stream_key(int(seed), "posterior", nid), virtual, size or 1)
            draw = target[nid].prior.ppf(u)
            noise[nid] = draw[:, 0] if size is None else draw
    values = _evaluate_pinned(graph, target, noise, sub, m)
    virtual = (np.repeat(sub.world_ids, m) * m + np.tile(np.arange(m), len(keep))).astype(np.int64)
    worlds = WorldBatch(values, virtual, seed, target.fingerprint)
    return worlds, np.repeat(keep, m), posterior


def counterfactual_worlds(graph: ScmGraph, factual, intervention: Intervention | None, m: int, seed: int,
                          check_support: bool = False) -> WorldBatch:
    """``m`` counterfactual worlds for one factual world under ``intervention``.

    Raises :class:`InconsistentObservationError` when the factual world cannot
    be produced by ``graph``.
    """
    batch, _ = _as_batch(factual)
    post = abduct(graph, batch, check_support)
    worlds, _, _ = counterfactual_batch(graph, batch, intervention, m, seed, check_support, posterior=post)
    return worlds


def replay(graph: ScmGraph, factual, seed: int = 0) -> World | WorldBatch:
    """Abduct then re-evaluate under the null intervention (one draw per world)."""
    batch, single = _as_batch(factual)
    post = abduct(graph, batch)
    worlds, _, _ = counterfactual_batch(graph, batch, None, 1, seed, posterior=post)
    worlds = WorldBatch(worlds.values, batch.world_ids, batch.seed, graph.fingerprint)
    return worlds[0] if single else worlds
