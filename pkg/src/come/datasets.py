"""Small bundled and synthetic graphs."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .graph import Graph, from_edges, load_edge_list
from .metrics import load_labels


def karate_club() -> Graph:
    with resources.files("come.data").joinpath("karate.edges").open(encoding="utf-8") as fh:
        return load_edge_list(fh)


def karate_factions() -> np.ndarray:
    """Two-faction ground truth, indexed by dense node id."""
    g = karate_club()
    with resources.files("come.data").joinpath("karate.labels").open(encoding="utf-8") as fh:
        labels = load_labels(fh)
    return np.array([next(iter(labels[int(v)])) for v in g.node_ids])


def planted_partition(sizes, p_in: float, p_out: float, rng: np.random.Generator) -> tuple[Graph, np.ndarray]:
    """Stochastic block model with equal intra-block and inter-block edge probabilities.

    Returns the graph and the block of each node.
    """
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    n = blocks.size
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    return from_edges(np.stack([iu[keep], ju[keep]], axis=1), num_nodes=n), blocks
