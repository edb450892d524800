"""Exogenous sampling, forward evaluation and Monte Carlo estimation."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Mapping, NamedTuple, Union

import numpy as np

from . import rng
from .errors import IncompleteExogenousError, InsufficientSamplesError, InvalidPriorError
from .graph import ScmGraph
from .world import World, WorldBatch

Query = Union[str, Callable]

# cap on node-instances per chunk; keeps lending batches (n x N) in memory
CHUNK_ELEMENTS = 1 << 20


class Estimate(NamedTuple):
    mean: float
    std_error: float
    n_used: int


def _dtype(kind):
    return np.float64 if kind == "real" else np.int64


def sample_exogenous(graph: ScmGraph, n_worlds: int, seed: int, start: int = 0) -> WorldBatch:
    """Draw exogenous values for worlds ``start .. start + n_worlds - 1``.

    The value of instance ``(world w, node v, plate index i)`` is read from
    position ``w * size + i`` of the stream keyed by ``(seed, v)``, where the
    node id already carries the step. It does not depend on which other worlds
    are drawn alongside it.
    """
    if n_worlds < 0:
        raise ValueError("n_worlds must be >= 0")
    seed = int(seed)
    world_ids = np.arange(start, start + n_worlds, dtype=np.int64)
    values = {}
    for nid in graph.exogenous_ids:
        node = graph[nid]
        try:
            node.prior.validate()
        except InvalidPriorError:
            raise
        except Exception as exc:  # pragma: no cover - defensive
            raise InvalidPriorError(f"bad prior on {nid!r}: {exc}") from exc
        size = graph.plate_size(nid)
        width = 1 if size is None else size
        u = rng.uniforms_for_worlds(rng.stream_key(seed, "prior", nid), world_ids, width)
        draw = node.prior.ppf(u)
        values[nid] = draw[:, 0] if size is None else draw
    return WorldBatch(values, world_ids, seed, graph.fingerprint)


def node_inputs(graph: ScmGraph, nid: str, values: Mapping[str, np.ndarray]) -> list:
    """Input arrays for ``nid`` shaped for broadcasting against its plate."""
    node = graph[nid]
    eq = node.equation
    args = []
    for inp in eq.inputs:
        v = values[inp]
        if not eq.reduce and node.plate is not None and graph[inp].plate is None:
            v = v[:, None]
        args.append(v)
    return args


def compute_node(graph: ScmGraph, nid: str, values: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    node = graph[nid]
    out = np.asarray(node.equation.fn(*node_inputs(graph, nid, values)))
    shape = (n,) + graph.shape(nid)
    if out.shape != shape:
        out = np.broadcast_to(out, shape)
    return np.array(out, dtype=_dtype(node.kind), copy=True)


def _as_batch(exo) -> tuple[WorldBatch, bool]:
    if isinstance(exo, WorldBatch):
        return exo, False
    if isinstance(exo, World):
        vals = {k: np.asarray(v)[None, ...] for k, v in exo.items()}
        return WorldBatch(vals, [exo.world_id], exo.seed, exo.fingerprint), True
    vals = {k: np.asarray(v) for k, v in dict(exo).items()}
    return WorldBatch(vals), False


def evaluate(graph: ScmGraph, exogenous) -> World | WorldBatch:
    """Compute every endogenous node from an exogenous assignment.

    ``exogenous`` may be a :class:`World`, a :class:`WorldBatch` or a mapping of
    arrays with a leading world axis. Extra (endogenous) entries in the input
    are ignored; the result holds the exogenous values plus freshly computed
    endogenous values, in the graph's topological order.
    """
    batch, single = _as_batch(exogenous)
    n = len(batch)
    values = {}
    for nid in graph.exogenous_ids:
        if nid not in batch.values:
            raise IncompleteExogenousError(f"no value supplied for exogenous node {nid!r}")
        v = np.asarray(batch.values[nid])
        expected = (n,) + graph.shape(nid)
        if v.shape != expected:
            raise IncompleteExogenousError(f"exogenous node {nid!r} has shape {v.shape}, expected {expected}")
        values[nid] = v
    for nid in graph.endogenous_ids:
        values[nid] = compute_node(graph, nid, values, n)
    ordered = {nid: values[nid] for nid in graph.order}
    out = WorldBatch(ordered, batch.world_ids, batch.seed, graph.fingerprint)
    return out[0] if single else out


def _chunk_size(graph: ScmGraph) -> int:
    widest = max([1] + [graph.plate_size(nid) or 1 for nid in graph.order])
    return max(1, CHUNK_ELEMENTS // (widest * max(1, len(graph))))


def _ranges(n, chunk):
    return [(s, min(chunk, n - s)) for s in range(0, n, chunk)]


def _map_chunks(fn, n, chunk, jobs):
    ranges = _ranges(n, chunk)
    if jobs is None or jobs <= 1 or len(ranges) <= 1:
        return [fn(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))


def sample_worlds(graph: ScmGraph, n: int, seed: int, jobs: int = 1, chunk: int | None = None) -> WorldBatch:
    """``evaluate`` applied to ``sample_exogenous``; chunking never changes the result."""
    if n == 0:
        return WorldBatch({nid: np.zeros((0,) + graph.shape(nid), dtype=_dtype(graph[nid].kind)) for nid in graph.order},
                          np.zeros(0, dtype=np.int64), seed, graph.fingerprint)
    chunk = chunk or _chunk_size(graph)
    parts = _map_chunks(lambda s, c: evaluate(graph, sample_exogenous(graph, c, seed, start=s)), n, chunk, jobs)
    return WorldBatch.concat(parts)


def as_query(query: Query) -> Callable:
    if isinstance(query, str):
        name = query
        return lambda w: w[name]
    return query


def query_values(query: Query, worlds) -> np.ndarray:
    """Evaluate a query on a batch; scalars broadcast to one value per world."""
    q = np.asarray(as_query(query)(worlds), dtype=np.float64)
    n = len(worlds)
    if q.ndim == 0:
        return np.full(n, float(q))
    if q.shape != (n,):
        raise ValueError(f"query must return one value per world, got shape {q.shape}")
    return q


def summarize(values: np.ndarray) -> Estimate:
    """Mean and standard error over finite entries (undefined entries are dropped)."""
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    if len(finite) == 0:
        return Estimate(math.nan, math.nan, 0)
    if len(finite) == 1:
        return Estimate(float(finite[0]), math.nan, 1)
    return Estimate(float(finite.mean()), float(finite.std(ddof=1) / math.sqrt(len(finite))), len(finite))


def query_samples(graph: ScmGraph, query: Query, n: int, seed: int, jobs: int = 1, chunk: int | None = None) -> np.ndarray:
    """Per-world query values over ``n`` sampled worlds, without keeping the worlds."""
    chunk = chunk or _chunk_size(graph)
    parts = _map_chunks(
        lambda s, c: query_values(query, evaluate(graph, sample_exogenous(graph, c, seed, start=s))), n, chunk, jobs
    )
    return np.concatenate(parts) if parts else np.zeros(0)


def estimate(graph: ScmGraph, query: Query, n: int, seed: int, jobs: int = 1) -> Estimate:
    """Monte Carlo mean of ``query`` over ``n`` worlds with its standard error.

    Worlds whose query value is undefined (NaN, e.g. a group mean over an
    empty group) are excluded; ``n_used`` reports how many remained.
    """
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 worlds, got {n}")
    return summarize(query_samples(graph, query, n, seed, jobs))


def multi_query_samples(graph: ScmGraph, queries: Mapping[str, Query], n: int, seed: int, jobs: int = 1,
                        chunk: int | None = None) -> dict:
    """Per-world values of several queries from one pass over ``n`` sampled worlds."""
    chunk = chunk or _chunk_size(graph)

    def run(s, c):
        worlds = evaluate(graph, sample_exogenous(graph, c, seed, start=s))
        return {name: query_values(q, worlds) for name, q in queries.items()}

    parts = _map_chunks(run, n, chunk, jobs)
    return {name: np.concatenate([p[name] for p in parts]) if parts else np.zeros(0) for name in queries}
