"""Gaussian mixture over node embeddings: community detection and embedding.

Each community is a Gaussian component (mean, covariance). Covariances are
full ``d x d`` matrices by default; ``diagonal=True`` keeps only variances,
stored as a (K, d) array.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_FLOOR = 1e-4
EMPTY_COMPONENT = 1e-8


class CovarianceError(np.linalg.LinAlgError):
    """A covariance matrix is not positive definite."""


@dataclass(frozen=True)
class GmmState:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    floor: float = DEFAULT_FLOOR
    diagonal: bool = False
    cholesky: np.ndarray = field(default=None, repr=False)
    precisions: np.ndarray = field(default=None, repr=False)
    log_dets: np.ndarray = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def build(cls, weights, means, covariances, floor: float = DEFAULT_FLOOR,
              diagonal: bool = False) -> "GmmState":
        """Apply the variance floor and cache factorisations.

        Raises CovarianceError if a floored covariance is still not positive
        definite.
        """
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        cov = np.array(covariances, dtype=np.float64)
        if diagonal:
            cov = np.maximum(cov.reshape(means.shape), floor)
            precisions = 1.0 / cov
            log_dets = np.log(cov).sum(axis=1)
            chol = None
        else:
            cov = cov.reshape(means.shape[0], means.shape[1], means.shape[1])
            cov = 0.5 * (cov + cov.transpose(0, 2, 1))
            for k in range(cov.shape[0]):
                cov[k] = floor_eigenvalues(cov[k], floor)
            chol = np.empty_like(cov)
            precisions = np.empty_like(cov)
            log_dets = np.empty(means.shape[0])
            eye = np.eye(means.shape[1])
            for k in range(means.shape[0]):
                chol[k], log_dets[k] = _cholesky(cov[k])
                precisions[k] = linalg.cho_solve((chol[k], True), eye)
                precisions[k] = 0.5 * (precisions[k] + precisions[k].T)
        return cls(weights, means, cov, floor, diagonal, chol, precisions, log_dets)

    @property
    def max_precision_eig(self) -> np.ndarray:
        """Largest eigenvalue of each inverse covariance."""
        if self.diagonal:
            return self.precisions.max(axis=1)
        return np.array([np.linalg.eigvalsh(p)[-1] for p in self.precisions])

    def check_invertible(self) -> None:
        if not (np.isfinite(self.precisions).all() and np.isfinite(self.log_dets).all()):
            raise CovarianceError("singular covariance in mixture state")

    def to_dict(self) -> dict:
        return {
            "K": self.n_components,
            "dim": self.dim,
            "covariance_mode": "diagonal" if self.diagonal else "full",
            "floor": self.floor,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmmState":
        return cls.build(data["weights"], data["means"], data["covariances"],
                         floor=data["floor"], diagonal=data["covariance_mode"] == "diagonal")


def floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    """Raise every eigenvalue of a symmetric matrix to at least ``floor``.

    This implies diag >= floor. Matrices already above the floor are returned
    unchanged (bit for bit).
    """
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] >= floor:
        return cov
    return (vecs * np.maximum(vals, floor)) @ vecs.T


def _cholesky(cov: np.ndarray) -> tuple[np.ndarray, float]:
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise CovarianceError("covariance is not positive definite") from None
    return chol, 2.0 * np.log(np.diag(chol)).sum()


def gaussian_log_pdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    diff = x - np.atleast_1d(mean)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    chol, log_det = _cholesky(cov)
    z = linalg.solve_triangular(chol, diff, lower=True)
    return float(-0.5 * (x.shape[0] * LOG_2PI + log_det + z @ z))


def log_density_matrix(phi: np.ndarray, gmm: GmmState) -> np.ndarray:
    """log N(phi_i | psi_k, Sigma_k) for all nodes and components, shape (n, K)."""
    n, d = phi.shape
    out = np.empty((n, gmm.n_components))
    for k in range(gmm.n_components):
        diff = phi - gmm.means[k]
        if gmm.diagonal:
            maha = (diff * diff * gmm.precisions[k]).sum(axis=1)
        else:
            z = linalg.solve_triangular(gmm.cholesky[k], diff.T, lower=True)
            maha = np.einsum("ij,ij->j", z, z)
        out[:, k] = -0.5 * (d * LOG_2PI + gmm.log_dets[k] + maha)
    return out


def _log_weighted(phi, gmm, weights=None):
    w = gmm.weights if weights is None else np.asarray(weights)
    with np.errstate(divide="ignore"):
        return np.log(w) + log_density_matrix(phi, gmm)


def e_step(phi: np.ndarray, gmm: GmmState) -> np.ndarray:
    logr = _log_weighted(phi, gmm)
    return np.exp(logr - logsumexp(logr, axis=1, keepdims=True))


def negative_log_likelihood(phi: np.ndarray, gmm: GmmState, weights=None) -> float:
    """-sum_i log sum_k w_ik N(phi_i | psi_k, Sigma_k).

    ``weights`` defaults to the mixing weights; an (n, K) row-stochastic array
    gives per-node membership weights instead.
    """
    return float(-logsumexp(_log_weighted(phi, gmm, weights), axis=1).sum())


def m_step(phi: np.ndarray, resp: np.ndarray, floor: float = DEFAULT_FLOOR,
           diagonal: bool = False, min_count: float = EMPTY_COMPONENT) -> GmmState:
    n, d = phi.shape
    K = resp.shape[1]
    counts = resp.sum(axis=0)
    means = np.zeros((K, d))
    covs = np.zeros((K, d)) if diagonal else np.zeros((K, d, d))
    empty = np.flatnonzero(counts < min_count)
    if empty.size:
        # nodes worst explained by the current mixture seed the empty components
        candidates = np.argsort(resp.max(axis=1), kind="stable")
        spread = max(phi.var(axis=0).mean(), floor)
        for k, node in zip(empty, candidates):
            logger.warning("component %d is empty (N_k=%.3g); reseeding at node %d", k, counts[k], node)
            means[k] = phi[node]
            covs[k] = spread if diagonal else spread * np.eye(d)
            counts[k] = 1.0
    for k in range(K):
        if k in empty:
            continue
        r = resp[:, k]
        means[k] = r @ phi / counts[k]
        diff = phi - means[k]
        if diagonal:
            covs[k] = r @ (diff * diff) / counts[k]
        else:
            covs[k] = (r[:, None] * diff).T @ diff / counts[k]
    weights = counts / counts.sum()
    return _build_with_jitter(weights, means, covs, floor, diagonal)


def _build_with_jitter(weights, means, covs, floor, diagonal):
    try:
        return GmmState.build(weights, means, covs, floor, diagonal)
    except CovarianceError:
        pass
    # rank-deficient despite the floor: add the smallest isotropic ridge that works
    eye = np.eye(means.shape[1])
    for power in range(9):
        ridge = floor * 10.0 ** power
        try:
            state = GmmState.build(weights, means, covs + ridge * eye, floor, diagonal)
        except CovarianceError:
            continue
        logger.warning("covariance rank-deficient after floor; added ridge %.3g", ridge)
        return state
    raise CovarianceError("could not regularise covariance")


def kmeans_plus_plus(phi: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each new center is the best of a few D^2-weighted candidates."""
    n = phi.shape[0]
    trials = 2 + int(np.log(K))
    centers = [int(rng.integers(n))]
    dist = ((phi - phi[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = dist.sum()
        if total <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = rng.choice(n, size=trials, p=dist / total)
        cand_dist = np.minimum(dist[None, :], ((phi[None, :, :] - phi[cand][:, None, :]) ** 2).sum(axis=2))
        best = int(np.argmin(cand_dist.sum(axis=1)))
        centers.append(int(cand[best]))
        dist = cand_dist[best]
    return np.array(centers)


def init_gmm(phi: np.ndarray, K: int, rng: np.random.Generator, floor: float = DEFAULT_FLOOR,
             diagonal: bool = False) -> GmmState:
    """k-means++ seeded means, isotropic covariance at the data variance, uniform weights."""
    n, d = phi.shape
    if K > n:
        raise ValueError(f"K={K} exceeds the number of nodes ({n})")
    centers = kmeans_plus_plus(phi, K, rng)
    spread = max(float(phi.var(axis=0).mean()), floor)
    covs = np.full((K, d), spread) if diagonal else np.tile(spread * np.eye(d), (K, 1, 1))
    return GmmState.build(np.full(K, 1.0 / K), phi[centers], covs, floor, diagonal)


def fit(phi: np.ndarray, K: int, T2: int, init="kmeans++", rng: np.random.Generator | None = None,
        floor: float = DEFAULT_FLOOR, diagonal: bool = False, history: list | None = None):
    """Run ``T2`` EM alternations and return (state, responsibilities).

    ``init`` is either ``"kmeans++"`` or a GmmState to warm-start from. The
    returned responsibilities are those of the returned state. If
    ``history`` is a list, the NLL of the initial state and after every
    M-step is appended to it.
    """
    if K < 1 or T2 < 1:
        raise ValueError("K and T2 must be >= 1")
    if isinstance(init, GmmState):
        gmm = init
    elif init == "kmeans++":
        gmm = init_gmm(phi, K, rng if rng is not None else np.random.default_rng(), floor, diagonal)
    else:
        raise ValueError(f"unknown init strategy {init!r}")
    if history is not None:
        history.append(negative_log_likelihood(phi, gmm))
    for _ in range(T2):
        resp = e_step(phi, gmm)
        gmm = m_step(phi, resp, floor, diagonal)
        if history is not None:
            history.append(negative_log_likelihood(phi, gmm))
    return gmm, e_step(phi, gmm)


def predict_communities(resp: np.ndarray, N: int) -> np.ndarray:
    """Top-``N`` community ids per node by responsibility; ties go to the lower id."""
    K = resp.shape[1]
    if not 1 <= N <= K:
        raise ValueError(f"N must be in [1, {K}], got {N}")
    return np.argsort(-resp, axis=1, kind="stable")[:, :N]
