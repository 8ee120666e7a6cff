"""Undirected graph loading and the degree-biased negative sampler."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np

logger = logging.getLogger(__name__)

NOISE_POWER = 0.75
MAX_NEGATIVE_RETRIES = 64


class GraphFormatError(ValueError):
    """Raised for malformed or empty edge-list input."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected, unweighted graph on dense node ids ``0..n-1``.

    ``indptr``/``indices`` hold the CSR adjacency with neighbours sorted
    ascending. ``node_ids`` maps each dense id back to the id used in the
    input file.
    """

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    edges: np.ndarray
    node_ids: np.ndarray
    self_loops_dropped: int = 0
    _index: dict = field(default=None, repr=False, compare=False)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.node_count)]

    def dense_id(self, original) -> int:
        index = self._index
        if index is None:
            index = {int(v): i for i, v in enumerate(self.node_ids)}
            object.__setattr__(self, "_index", index)
        return index[int(original)]

    def dense_ids(self, originals: Iterable) -> np.ndarray:
        return np.array([self.dense_id(v) for v in originals], dtype=np.int64)


def from_edges(pairs, node_ids=None, num_nodes: int | None = None) -> Graph:
    """Build a Graph from dense integer pairs.

    Pairs are symmetrised and deduplicated; self-loops are dropped and
    counted. ``num_nodes`` may exceed the largest id to keep isolated nodes.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if num_nodes is None:
        num_nodes = int(pairs.max()) + 1 if pairs.size else 0
    if num_nodes == 0:
        raise GraphFormatError("graph has no nodes")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise GraphFormatError("edge endpoint outside [0, num_nodes)")
    loops = pairs[:, 0] == pairs[:, 1]
    n_loops = int(loops.sum())
    if n_loops:
        logger.warning("dropped %d self-loop(s)", n_loops)
    pairs = pairs[~loops]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    edges = np.unique(np.stack([lo, hi], axis=1), axis=0) if pairs.size else np.empty((0, 2), np.int64)

    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_nodes), out=indptr[1:])

    if node_ids is None:
        node_ids = np.arange(num_nodes, dtype=np.int64)
    return Graph(
        node_count=num_nodes,
        indptr=indptr,
        indices=dst.astype(np.int32),
        edges=edges.astype(np.int32),
        node_ids=np.asarray(node_ids, dtype=np.int64),
        self_loops_dropped=n_loops,
    )


def load_edge_list(source: TextIO | str) -> Graph:
    """Parse a whitespace separated ``i j`` edge list.

    Lines starting with ``#`` and blank lines are skipped. Node ids may be
    any non-negative integers; they are remapped to dense ids in order of
    first appearance and the mapping is kept on ``Graph.node_ids``.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    remap: dict[int, int] = {}
    pairs = []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            extra = " (weighted edge lists are not supported)" if len(parts) == 3 else ""
            raise GraphFormatError(f"line {lineno}: expected 2 integer tokens, got {len(parts)}{extra}")
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer node id in {line!r}") from None
        if a < 0 or b < 0:
            raise GraphFormatError(f"line {lineno}: negative node id in {line!r}")
        pairs.append((remap.setdefault(a, len(remap)), remap.setdefault(b, len(remap))))
    if not pairs:
        raise GraphFormatError("edge list is empty")
    node_ids = np.fromiter(remap.keys(), dtype=np.int64, count=len(remap))
    return from_edges(pairs, node_ids=node_ids, num_nodes=len(remap))


def save_edge_list(g: Graph, sink: TextIO) -> None:
    """Write edges with original ids, one ``i j`` per line, in canonical order.

    Pairs are written smaller id first and sorted, so the output does not
    depend on the dense remapping. Isolated nodes are not representable.
    """
    a = g.node_ids[g.edges[:, 0]]
    b = g.node_ids[g.edges[:, 1]]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    for i in np.lexsort((hi, lo)):
        sink.write(f"{lo[i]} {hi[i]}\n")


def read_edge_list(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return load_edge_list(fh)


@dataclass(frozen=True)
class NoiseDistribution:
    """Alias table over nodes for P(l) proportional to degree**0.75."""

    probs: np.ndarray
    alias_prob: np.ndarray
    alias_idx: np.ndarray

    @property
    def size(self) -> int:
        return self.probs.shape[0]

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray | int:
        n = self.size
        k = rng.integers(0, n, size=size)
        u = rng.random(size=size)
        out = np.where(u < self.alias_prob[k], k, self.alias_idx[k])
        return int(out) if size is None else out


def alias_table(weights) -> tuple[np.ndarray, np.ndarray]:
    """Vose's alias method. Returns (acceptance probability, alias index)."""
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    scaled = w * (n / w.sum())
    prob = np.zeros(n)
    alias = np.arange(n, dtype=np.int32)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] -= 1.0 - scaled[s]
        (small if scaled[g] < 1.0 else large).append(g)
    # leftovers are 1 up to rounding
    for i in large + small:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


def build_negative_sampler(g: Graph | np.ndarray) -> NoiseDistribution:
    degrees = g.degrees if isinstance(g, Graph) else np.asarray(g)
    if degrees.size == 0:
        raise ValueError("cannot build a sampler for an empty graph")
    weights = np.power(degrees.astype(np.float64), NOISE_POWER)
    total = weights.sum()
    if total <= 0:
        raise ValueError("all node degrees are zero; nothing to sample")
    prob, alias = alias_table(weights)
    return NoiseDistribution(probs=weights / total, alias_prob=prob, alias_idx=alias)


def sample_negative(nd: NoiseDistribution, rng: np.random.Generator, exclude: int | None = None) -> int:
    """Draw one node from the noise distribution, redrawing while equal to ``exclude``."""
    if exclude is not None and nd.probs[exclude] >= 1.0 - 1e-15:
        raise ValueError(f"node {exclude} is the only node with nonzero noise weight")
    for _ in range(MAX_NEGATIVE_RETRIES):
        l = nd.sample(rng)
        if l != exclude:
            return l
    # exclude carries almost all the mass: draw from the exact conditional law
    p = nd.probs.copy()
    p[exclude] = 0.0
    return int(rng.choice(nd.size, p=p / p.sum()))
