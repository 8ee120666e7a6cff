"""Node and context embedding tables, SGD update rules and loss terms.

The single-step functions (``sgd_first_order`` and friends) are plain numpy
and act as the readable reference; the ``*_pass`` functions run the same
rules over a whole phase through the compiled kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np
from scipy.special import expit, log_expit

from . import _kernels
from .graph import Graph, NoiseDistribution
from .gmm import GmmState, log_density_matrix
from .walks import WalkCorpus


@dataclass
class EmbeddingTables:
    phi: np.ndarray
    phi_ctx: np.ndarray

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    @property
    def node_count(self) -> int:
        return self.phi.shape[0]

    def copy(self) -> "EmbeddingTables":
        return EmbeddingTables(self.phi.copy(), self.phi_ctx.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.phi).all() and np.isfinite(self.phi_ctx).all())


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.1
    beta: float = 0.1
    m: int = 5
    lr: float = 0.025
    K: int = 1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.m < 1 or self.K < 1:
            raise ValueError("m and K must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


def init_embeddings(n: int, d: int, rng: np.random.Generator) -> EmbeddingTables:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    phi = (rng.random((n, d)) - 0.5) / d
    return EmbeddingTables(phi=phi, phi_ctx=np.zeros((n, d)))


# -- single-step reference updates -------------------------------------------

def sgd_first_order(tables: EmbeddingTables, edge, lr: float) -> None:
    i, j = edge
    phi = tables.phi
    a = phi[i].copy()
    b = phi[j].copy()
    g = lr * expit(-a @ b)
    phi[i] = a + g * b
    phi[j] = b + g * a


def sgd_second_order(tables: EmbeddingTables, i: int, j: int, negatives, alpha: float, lr: float) -> None:
    """One descent step on ``-alpha * Delta_ij`` with the negatives held fixed."""
    phi, ctx = tables.phi, tables.phi_ctx
    negatives = np.asarray(negatives, dtype=np.int64)
    x = phi[i].copy()
    g_pos = expit(-ctx[j] @ x)
    coef = expit(ctx[negatives] @ x) if negatives.size else np.zeros(0)
    grad = g_pos * ctx[j] - coef @ ctx[negatives] if negatives.size else g_pos * ctx[j]
    scale = lr * alpha
    ctx[j] += scale * g_pos * x
    np.subtract.at(ctx, negatives, scale * coef[:, None] * x[None, :])
    phi[i] += scale * grad


def community_gradient(x: np.ndarray, weights: np.ndarray, gmm: GmmState) -> np.ndarray:
    """sum_k w_k * Sigma_k^{-1} (x - psi_k) for one node."""
    diff = x[None, :] - gmm.means
    if gmm.diagonal:
        return (weights[:, None] * gmm.precisions * diff).sum(axis=0)
    return np.einsum("k,kde,ke->d", weights, gmm.precisions, diff)


def community_step_sizes(gmm: GmmState, scale: float, clip: bool = True) -> np.ndarray:
    """Per-component step ``lr * beta / K``, capped at 1 / lambda_max(Sigma_k^{-1}) when clipping."""
    sizes = np.full(gmm.n_components, scale)
    if clip:
        sizes = np.minimum(sizes, 1.0 / gmm.max_precision_eig)
    return sizes


def sgd_community(tables: EmbeddingTables, i: int, gmm: GmmState, resp: np.ndarray,
                  beta: float, K: int, lr: float, clip: bool = True) -> None:
    """Move phi_i down the community-bound gradient.

    With ``clip`` each component's pull is capped so it cannot carry the node
    past that component's mean; the cap is inactive while
    ``lr * beta / K * lambda_max(Sigma_k^{-1}) <= 1``.
    """
    gmm.check_invertible()
    sizes = community_step_sizes(gmm, lr * beta / K, clip)
    tables.phi[i] -= community_gradient(tables.phi[i], resp[i] * sizes, gmm)


# -- losses ------------------------------------------------------------------

def loss_first_order(tables: EmbeddingTables, g: Graph) -> float:
    phi = tables.phi
    e = g.edges
    dots = np.einsum("ij,ij->i", phi[e[:, 0]], phi[e[:, 1]])
    return float(-log_expit(dots).sum())


def loss_second_order(tables: EmbeddingTables, centers, contexts, negatives, alpha: float) -> float:
    """Monte Carlo estimate of the second-order objective over recorded pairs and draws."""
    phi, ctx = tables.phi, tables.phi_ctx
    centers = np.asarray(centers)
    contexts = np.asarray(contexts)
    negatives = np.asarray(negatives).reshape(len(centers), -1)
    x = phi[centers]
    pos = np.einsum("pd,pd->p", ctx[contexts], x)
    neg = np.einsum("pmd,pd->pm", ctx[negatives], x)
    delta = log_expit(pos) + log_expit(-neg).sum(axis=1)
    return float(-alpha * delta.sum())


def loss_community_bound(tables: EmbeddingTables, gmm: GmmState, resp: np.ndarray,
                         beta: float, K: int) -> float:
    if beta == 0:
        return 0.0
    logn = log_density_matrix(tables.phi, gmm)
    return float(-(beta / K) * (resp * logn).sum())


# -- phase passes ------------------------------------------------------------

def first_order_pass(tables: EmbeddingTables, g: Graph, order: np.ndarray, lr0: float,
                     lr_min: float, step0: int, total: int, threads: int = 1) -> None:
    kernel = _kernels.sgd_edges_par if threads > 1 else _kernels.sgd_edges
    kernel(tables.phi, g.edges, order.astype(np.int64), lr0, lr_min, step0, total)


def second_order_pass(tables: EmbeddingTables, corpus: WalkCorpus, order: np.ndarray, zeta: int,
                      nd: NoiseDistribution, m: int, alpha: float, lr0: float, lr_min: float,
                      step0: int, total: int, seed: int, threads: int = 1) -> None:
    kernel = _kernels.sgd_corpus_par if threads > 1 else _kernels.sgd_corpus
    kernel(tables.phi, tables.phi_ctx, corpus.walks, order.astype(np.int64), zeta,
           nd.alias_prob, nd.alias_idx, m, alpha, lr0, lr_min, step0, total, np.uint64(seed))


def community_pass(tables: EmbeddingTables, gmm: GmmState, resp: np.ndarray, beta: float, K: int,
                   order: np.ndarray, lr0: float, lr_min: float, step0: int, total: int,
                   threads: int = 1, clip: bool = True) -> None:
    gmm.check_invertible()
    if gmm.diagonal:
        kernel = _kernels.sgd_community_diag_par if threads > 1 else _kernels.sgd_community_diag
    else:
        kernel = _kernels.sgd_community_full_par if threads > 1 else _kernels.sgd_community_full
    max_eig = gmm.max_precision_eig if clip else np.zeros(gmm.n_components)
    kernel(tables.phi, order.astype(np.int64), np.ascontiguousarray(resp), gmm.means,
           gmm.precisions, max_eig, beta / K, lr0, lr_min, step0, total)


def corpus_loss(tables: EmbeddingTables, corpus: WalkCorpus, zeta: int, nd: NoiseDistribution,
                m: int, alpha: float, seed: int, threads: int = 1) -> float:
    """Second-order loss over the whole corpus, replaying the draws of stream ``seed``."""
    if alpha == 0:
        return 0.0
    kernel = _kernels.corpus_loss_par if threads > 1 else _kernels.corpus_loss
    raw = kernel(tables.phi, tables.phi_ctx, corpus.walks, zeta, nd.alias_prob, nd.alias_idx,
                 m, np.uint64(seed))
    return float(alpha * raw)


def corpus_draws(corpus: WalkCorpus, zeta: int, nd: NoiseDistribution, m: int, seed: int):
    """Materialise (centers, contexts, negatives) exactly as a pass with ``seed`` draws them."""
    return _kernels.corpus_negatives(corpus.walks, zeta, nd.alias_prob, nd.alias_idx, m, np.uint64(seed))


# -- word2vec text format ----------------------------------------------------

def write_word2vec(vectors: np.ndarray, ids, sink: TextIO) -> None:
    n, d = vectors.shape
    sink.write(f"{n} {d}\n")
    for node, row in zip(ids, vectors):
        sink.write(str(node) + " " + " ".join(f"{v:.6g}" for v in row) + "\n")


def read_word2vec(source: TextIO) -> tuple[list[str], np.ndarray]:
    n, d = map(int, source.readline().split())
    ids, rows = [], []
    for line in source:
        parts = line.split()
        if not parts:
            continue
        if len(parts) != d + 1:
            raise ValueError(f"expected {d + 1} fields, got {len(parts)}")
        ids.append(parts[0])
        rows.append([float(v) for v in parts[1:]])
    if len(ids) != n:
        raise ValueError(f"header announces {n} vectors, found {len(ids)}")
    return ids, np.array(rows).reshape(n, d)
