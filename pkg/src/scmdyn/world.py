"""World containers.

A :class:`WorldBatch` stores one array per node with a leading world axis
(``(n,)`` for unplated nodes, ``(n, size)`` for plated ones). Indexing a batch
with an integer yields a single :class:`World`; indexing with a node id yields
that node's array. Queries written as ``lambda w: w["O"]`` therefore work on
both.
"""

from __future__ import annotations

import csv
import io
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import UnknownNodeError


def _same_array(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    if a.dtype.kind == "f" or b.dtype.kind == "f":
        return bool(np.array_equal(a, b, equal_nan=True))
    return bool(np.array_equal(a, b))


class World(Mapping):
    """Values of every node instance for one simulation run."""

    __slots__ = ("_values", "world_id", "seed", "fingerprint")

    def __init__(self, values: Mapping[str, np.ndarray], world_id=0, seed=None, fingerprint=None):
        self._values = dict(values)
        self.world_id = int(world_id)
        self.seed = seed
        self.fingerprint = fingerprint

    def __getitem__(self, node_id):
        try:
            return self._values[node_id]
        except KeyError:
            raise UnknownNodeError(f"world has no value for {node_id!r}") from None

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def __eq__(self, other):
        if not isinstance(other, World):
            return NotImplemented
        return self._values.keys() == other._values.keys() and all(
            _same_array(v, other._values[k]) for k, v in self._values.items()
        )

    __hash__ = None

    def __repr__(self):
        return f"World(id={self.world_id}, nodes={len(self._values)})"

    def restrict(self, node_ids) -> "World":
        return World({k: self._values[k] for k in node_ids if k in self._values}, self.world_id, self.seed, self.fingerprint)


class WorldBatch(Sequence):
    """A collection of worlds with vectorised per-node storage."""

    def __init__(self, values: Mapping[str, np.ndarray], world_ids=None, seed=None, fingerprint=None):
        self.values = dict(values)
        if world_ids is None:
            n = len(next(iter(self.values.values()))) if self.values else 0
            world_ids = np.arange(n, dtype=np.int64)
        self.world_ids = np.asarray(world_ids, dtype=np.int64)
        self.seed = seed
        self.fingerprint = fingerprint
        for k, v in self.values.items():
            if len(v) != len(self.world_ids):
                raise ValueError(f"node {k!r} has {len(v)} rows for {len(self.world_ids)} worlds")

    @classmethod
    def from_worlds(cls, worlds: Sequence[World], seed=None, fingerprint=None) -> "WorldBatch":
        worlds = list(worlds)
        if not worlds:
            return cls({}, np.zeros(0, dtype=np.int64), seed, fingerprint)
        keys = list(worlds[0].keys())
        values = {k: np.stack([np.asarray(w[k]) for w in worlds]) for k in keys}
        return cls(values, [w.world_id for w in worlds], seed if seed is not None else worlds[0].seed,
                   fingerprint if fingerprint is not None else worlds[0].fingerprint)

    @classmethod
    def concat(cls, batches: Sequence["WorldBatch"]) -> "WorldBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls({}, np.zeros(0, dtype=np.int64))
        keys = batches[0].values.keys()
        values = {k: np.concatenate([b.values[k] for b in batches]) for k in keys}
        ids = np.concatenate([b.world_ids for b in batches])
        return cls(values, ids, batches[0].seed, batches[0].fingerprint)

    def __len__(self):
        return len(self.world_ids)

    def __getitem__(self, key):
        if isinstance(key, str):
            try:
                return self.values[key]
            except KeyError:
                raise UnknownNodeError(f"batch has no values for {key!r}") from None
        if isinstance(key, slice):
            return self.take(np.arange(len(self))[key])
        i = int(key)
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(key)
        return World({k: v[i] for k, v in self.values.items()}, self.world_ids[i], self.seed, self.fingerprint)

    def __iter__(self) -> Iterator[World]:
        for i in range(len(self)):
            yield self[i]

    def __contains__(self, item):
        if isinstance(item, str):
            return item in self.values
        return super().__contains__(item)

    def __eq__(self, other):
        if not isinstance(other, WorldBatch):
            return NotImplemented
        return (
            self.values.keys() == other.values.keys()
            and np.array_equal(self.world_ids, other.world_ids)
            and all(_same_array(v, other.values[k]) for k, v in self.values.items())
        )

    __hash__ = None

    def __repr__(self):
        return f"WorldBatch(n={len(self)}, nodes={len(self.values)})"

    @property
    def node_ids(self):
        return tuple(self.values)

    def take(self, index) -> "WorldBatch":
        index = np.asarray(index)
        return WorldBatch({k: v[index] for k, v in self.values.items()}, self.world_ids[index], self.seed, self.fingerprint)

    def restrict(self, node_ids) -> "WorldBatch":
        return WorldBatch({k: self.values[k] for k in node_ids if k in self.values}, self.world_ids, self.seed, self.fingerprint)

    def with_values(self, extra: Mapping[str, np.ndarray]) -> "WorldBatch":
        values = dict(self.values)
        values.update(extra)
        return WorldBatch(values, self.world_ids, self.seed, self.fingerprint)


CSV_COLUMNS = ("world_id", "step", "plate_index", "node_id", "value")


def _split_id(node_id: str):
    name, sep, step = node_id.rpartition("@")
    if sep and step.isdigit():
        return name, int(step)
    return node_id, None


def worlds_to_csv(worlds, path=None, graph=None) -> str | None:
    """Write worlds in long format: ``world_id, step, plate_index, node_id, value``.

    ``node_id`` is the node's base name; ``step`` and ``plate_index`` are left
    empty for unstepped / unplated nodes. Returns the text when ``path`` is None.
    """
    if not isinstance(worlds, WorldBatch):
        worlds = WorldBatch.from_worlds(list(worlds))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    ids = list(graph.order) if graph is not None else list(worlds.values)
    ids = [k for k in ids if k in worlds.values]
    for row, wid in enumerate(worlds.world_ids):
        for nid in ids:
            if graph is not None and nid in graph:
                name, step = graph[nid].name, graph[nid].step
            else:
                name, step = _split_id(nid)
            value = np.asarray(worlds.values[nid][row])
            step_txt = "" if step is None else str(step)
            if value.ndim == 0:
                writer.writerow((int(wid), step_txt, "", name, _fmt(value)))
            else:
                for j, v in enumerate(value.reshape(-1)):
                    writer.writerow((int(wid), step_txt, j, name, _fmt(v)))
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return None


def _fmt(v) -> str:
    v = np.asarray(v)
    if v.dtype.kind in "iub":
        return str(int(v))
    f = float(v)
    return "" if np.isnan(f) else repr(f)
