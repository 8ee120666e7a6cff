"""Community quality: conductance and normalized mutual information."""
from __future__ import annotations

import math
from collections import defaultdict
from typing import TextIO

import numpy as np

from .graph import Graph


def conductance(g: Graph, partition, aggregate: str = "mean") -> float:
    """Aggregate of cut(S) / min(vol(S), vol(V \\ S)) over the communities present.

    A community whose smaller side has zero volume scores 1.
    """
    labels = np.asarray(partition)
    if labels.shape[0] != g.node_count:
        raise ValueError("partition must cover every node")
    _, dense = np.unique(labels, return_inverse=True)
    n_comm = int(dense.max()) + 1
    deg = g.degrees.astype(np.float64)
    vol = np.bincount(dense, weights=deg, minlength=n_comm)
    a = dense[g.edges[:, 0]]
    b = dense[g.edges[:, 1]]
    crossing = a != b
    cut = np.bincount(a[crossing], minlength=n_comm) + np.bincount(b[crossing], minlength=n_comm)
    denom = np.minimum(vol, vol.sum() - vol)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > 0, cut / np.where(denom > 0, denom, 1.0), 1.0)
    if aggregate == "mean":
        return float(scores.mean())
    if aggregate == "sum":
        return float(scores.sum())
    if aggregate == "max":
        return float(scores.max())
    raise ValueError(f"unknown aggregate {aggregate!r}")


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return -math.fsum((p * np.log(p)).tolist())


def nmi(pred, truth, normalization: str = "arithmetic") -> float:
    """Mutual information normalised by the mean (or max, or geometric mean) entropy."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("partitions must cover the same nodes")
    n = pred.shape[0]
    _, a = np.unique(pred, return_inverse=True)
    _, b = np.unique(truth, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1.0)
    h_a = _entropy(table.sum(axis=1), n)
    h_b = _entropy(table.sum(axis=0), n)
    if h_a == 0.0 and h_b == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    # fsum is order independent, which makes nmi(a, b) == nmi(b, a) exact
    mi = math.fsum((table[nz] / n * np.log(table[nz] * n / outer[nz])).tolist())
    mi = max(mi, 0.0)
    if normalization == "arithmetic":
        denom = 0.5 * (h_a + h_b)
    elif normalization == "max":
        denom = max(h_a, h_b)
    elif normalization == "sqrt":
        denom = np.sqrt(h_a * h_b)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if denom == 0.0:
        return 0.0
    return min(mi / denom, 1.0)


def load_labels(source: TextIO) -> dict[int, set[int]]:
    """Read ``node_id label_id`` lines; a node may appear once per label."""
    labels: dict[int, set[int]] = defaultdict(set)
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'node_id label_id'")
        labels[int(parts[0])].add(int(parts[1]))
    return dict(labels)


def is_single_label(labels: dict[int, set[int]]) -> bool:
    return all(len(v) == 1 for v in labels.values())
