"""Uniform random-walk corpus and skip-gram context windows."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence, TextIO

import numpy as np

from . import _kernels
from .graph import Graph


@dataclass(frozen=True)
class WalkCorpus:
    """``walks`` is an (n_walks, ell) int32 array of dense node ids.

    Walks are ordered round by round: round ``r`` holds one walk from every
    non-isolated node, in a shuffled node order.
    """

    walks: np.ndarray
    gamma: int
    ell: int
    seed: int

    def __len__(self) -> int:
        return self.walks.shape[0]

    def pair_count(self, zeta: int) -> int:
        return len(self) * int(_kernels.pairs_per_walk(self.ell, zeta))


def sample_paths(g: Graph, gamma: int, ell: int, seed: int, threads: int = 1) -> WalkCorpus:
    """Sample ``gamma`` uniform random walks of length ``ell`` from every non-isolated node.

    Each walk's randomness is keyed on (seed, start node, round), so the corpus
    is identical for any ``threads`` value.
    """
    if gamma < 1 or ell < 1:
        raise ValueError("gamma and ell must be >= 1")
    active = np.flatnonzero(g.degrees > 0).astype(np.int32)
    order_rng = np.random.default_rng([seed, 0x77A1C])
    starts = np.concatenate([order_rng.permutation(active) for _ in range(gamma)]) if active.size else np.empty(0, np.int32)
    rounds = np.repeat(np.arange(gamma, dtype=np.int64), active.size)
    kernel = _kernels.sample_walks_par if threads > 1 else _kernels.sample_walks
    walks = kernel(g.indptr, g.indices, starts.astype(np.int32), rounds, np.uint64(seed), ell)
    return WalkCorpus(walks=walks, gamma=gamma, ell=ell, seed=seed)


def context_pairs(walk: Sequence[int], zeta: int) -> Iterator[tuple[int, int]]:
    """Yield (center, context) for every position pair at most ``zeta`` apart.

    The window shrinks at the walk boundaries.
    """
    if zeta < 1:
        raise ValueError("zeta must be >= 1")
    n = len(walk)
    for t in range(n):
        for u in range(max(0, t - zeta), min(n, t + zeta + 1)):
            if u != t:
                yield walk[t], walk[u]


def window_pair_count(ell: int, zeta: int) -> int:
    return sum(min(t, zeta) + min(ell - 1 - t, zeta) for t in range(ell))


def save_corpus(corpus: WalkCorpus, sink: TextIO) -> None:
    sink.write(f"# gamma={corpus.gamma} ell={corpus.ell} seed={corpus.seed}\n")
    for row in corpus.walks:
        sink.write(" ".join(map(str, row.tolist())) + "\n")


def load_corpus(source: TextIO) -> WalkCorpus:
    header = source.readline()
    if not header.startswith("#"):
        raise ValueError("corpus cache is missing its header line")
    meta = dict(tok.split("=", 1) for tok in header[1:].split())
    rows = [list(map(int, line.split())) for line in source if line.strip()]
    ell = int(meta["ell"])
    walks = np.array(rows, dtype=np.int32).reshape(-1, ell)
    return WalkCorpus(walks=walks, gamma=int(meta["gamma"]), ell=ell, seed=int(meta["seed"]))
