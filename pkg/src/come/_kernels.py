"""Numba kernels for the hot loops: walks, negative draws, SGD passes.

Every kernel body is compiled twice, once serial and once with
``parallel=True`` (hogwild: unsynchronised row writes). In the serial build
``prange`` degrades to ``range``. Randomness comes from splitmix64 streams
keyed on (seed, item index), so the draws do not depend on thread count.
"""
import numpy as np
from numba import njit, prange

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
_S32 = np.uint64(32)
_LOW32 = np.uint64(0xFFFFFFFF)
_INV32 = 1.0 / 4294967296.0
NEG_RETRIES = 64


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def stream_seed(seed, a, b):
    return mix64(mix64(mix64(np.uint64(seed)) + np.uint64(a)) + np.uint64(b))


@njit(cache=True, inline="always")
def next_uniform(state):
    state = state + _GOLDEN
    return state, float(mix64(state) >> _S11) * _INV53


@njit(cache=True, inline="always")
def draw_alias(state, alias_prob, alias_idx):
    # one 64-bit draw: high half picks the slot, low half is the acceptance test
    n = alias_prob.shape[0]
    state = state + _GOLDEN
    x = mix64(state)
    k = int(((x >> _S32) * np.uint64(n)) >> _S32)
    v = float(x & _LOW32) * _INV32
    if v < alias_prob[k]:
        return state, k
    return state, alias_idx[k]


@njit(cache=True, inline="always")
def sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit(cache=True, inline="always")
def log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True, inline="always")
def linear_lr(lr0, lr_min, step, total):
    if total <= 0:
        return lr0
    frac = step / total
    if frac > 1.0:
        frac = 1.0
    return lr0 - (lr0 - lr_min) * frac


@njit(cache=True)
def draw_many(alias_prob, alias_idx, seed, count):
    out = np.empty(count, dtype=np.int64)
    state = stream_seed(seed, 0, 0)
    for t in range(count):
        state, out[t] = draw_alias(state, alias_prob, alias_idx)
    return out


# -- walks -----------------------------------------------------------------

def _walks_impl(indptr, indices, starts, rounds, seed, ell):
    n_walks = starts.shape[0]
    out = np.empty((n_walks, ell), dtype=np.int32)
    for w in prange(n_walks):
        cur = starts[w]
        state = stream_seed(seed, cur, rounds[w])
        out[w, 0] = cur
        for t in range(1, ell):
            lo = indptr[cur]
            deg = indptr[cur + 1] - lo
            state, u = next_uniform(state)
            k = int(u * deg)
            if k >= deg:
                k = deg - 1
            cur = indices[lo + k]
            out[w, t] = cur
    return out


# -- context windows --------------------------------------------------------

@njit(cache=True)
def pairs_per_walk(ell, zeta):
    total = 0
    for t in range(ell):
        total += min(t, zeta) + min(ell - 1 - t, zeta)
    return total


@njit(cache=True, inline="always")
def _draw_negatives(state, negs, context, alias_prob, alias_idx):
    for s in range(negs.shape[0]):
        l = context
        for _ in range(NEG_RETRIES):
            state, l = draw_alias(state, alias_prob, alias_idx)
            if l != context:
                break
        negs[s] = l
    return state


def _corpus_negatives_impl(walks, zeta, alias_prob, alias_idx, m, seed):
    n_walks, ell = walks.shape
    per = pairs_per_walk(ell, zeta)
    centers = np.empty(n_walks * per, dtype=np.int64)
    contexts = np.empty(n_walks * per, dtype=np.int64)
    negatives = np.empty((n_walks * per, m), dtype=np.int64)
    for w in prange(n_walks):
        state = stream_seed(seed, w, 1)
        p = w * per
        negs = np.empty(m, dtype=np.int64)
        for t in range(ell):
            lo = max(0, t - zeta)
            hi = min(ell - 1, t + zeta)
            for u in range(lo, hi + 1):
                if u == t:
                    continue
                j = walks[w, u]
                state = _draw_negatives(state, negs, j, alias_prob, alias_idx)
                centers[p] = walks[w, t]
                contexts[p] = j
                negatives[p, :] = negs
                p += 1
    return centers, contexts, negatives


# -- SGD passes -------------------------------------------------------------

def _sgd_edges_impl(phi, edges, order, lr0, lr_min, step0, total):
    d = phi.shape[1]
    for p in prange(order.shape[0]):
        e = order[p]
        i = edges[e, 0]
        j = edges[e, 1]
        lr = linear_lr(lr0, lr_min, step0 + p, total)
        dot = 0.0
        for c in range(d):
            dot += phi[i, c] * phi[j, c]
        g = lr * sigmoid(-dot)
        for c in range(d):
            a = phi[i, c]
            b = phi[j, c]
            phi[i, c] = a + g * b
            phi[j, c] = b + g * a


def _sgd_corpus_impl(phi, ctx, walks, order, zeta, alias_prob, alias_idx, m,
                     alpha, lr0, lr_min, step0, total, seed):
    n_walks, ell = walks.shape
    d = phi.shape[1]
    per = pairs_per_walk(ell, zeta)
    for p in prange(order.shape[0]):
        w = order[p]
        state = stream_seed(seed, w, 1)
        step = step0 + p * per
        negs = np.empty(m, dtype=np.int64)
        coef = np.empty(m)
        old = np.empty(d)
        grad = np.empty(d)
        for t in range(ell):
            i = walks[w, t]
            lo = max(0, t - zeta)
            hi = min(ell - 1, t + zeta)
            for u in range(lo, hi + 1):
                if u == t:
                    continue
                j = walks[w, u]
                state = _draw_negatives(state, negs, j, alias_prob, alias_idx)
                scale = alpha * linear_lr(lr0, lr_min, step, total)
                step += 1
                for c in range(d):
                    old[c] = phi[i, c]
                dot = 0.0
                for c in range(d):
                    dot += ctx[j, c] * old[c]
                g_pos = sigmoid(-dot)
                for c in range(d):
                    grad[c] = g_pos * ctx[j, c]
                for s in range(m):
                    l = negs[s]
                    dot = 0.0
                    for c in range(d):
                        dot += ctx[l, c] * old[c]
                    coef[s] = sigmoid(dot)
                    for c in range(d):
                        grad[c] -= coef[s] * ctx[l, c]
                for c in range(d):
                    ctx[j, c] += scale * g_pos * old[c]
                for s in range(m):
                    l = negs[s]
                    for c in range(d):
                        ctx[l, c] -= scale * coef[s] * old[c]
                for c in range(d):
                    phi[i, c] += scale * grad[c]


def _corpus_loss_impl(phi, ctx, walks, zeta, alias_prob, alias_idx, m, seed):
    n_walks, ell = walks.shape
    d = phi.shape[1]
    partial = np.zeros(n_walks)
    for w in prange(n_walks):
        state = stream_seed(seed, w, 1)
        negs = np.empty(m, dtype=np.int64)
        acc = 0.0
        for t in range(ell):
            i = walks[w, t]
            lo = max(0, t - zeta)
            hi = min(ell - 1, t + zeta)
            for u in range(lo, hi + 1):
                if u == t:
                    continue
                j = walks[w, u]
                state = _draw_negatives(state, negs, j, alias_prob, alias_idx)
                dot = 0.0
                for c in range(d):
                    dot += ctx[j, c] * phi[i, c]
                acc -= log_sigmoid(dot)
                for s in range(m):
                    l = negs[s]
                    dot = 0.0
                    for c in range(d):
                        dot += ctx[l, c] * phi[i, c]
                    acc -= log_sigmoid(-dot)
        partial[w] = acc
    return partial.sum()


def _sgd_community_full_impl(phi, order, weights, means, precisions, max_eig, coef0,
                             lr0, lr_min, step0, total):
    d = phi.shape[1]
    K = means.shape[0]
    for p in prange(order.shape[0]):
        i = order[p]
        scale = coef0 * linear_lr(lr0, lr_min, step0 + p, total)
        diff = np.empty(d)
        step = np.zeros(d)
        for k in range(K):
            w = weights[i, k]
            if w == 0.0:
                continue
            # cap so no component pulls the node past its mean
            s = min(scale, 1.0 / max_eig[k]) if max_eig[k] > 0 else scale
            for c in range(d):
                diff[c] = phi[i, c] - means[k, c]
            for r in range(d):
                acc = 0.0
                for c in range(d):
                    acc += precisions[k, r, c] * diff[c]
                step[r] += s * w * acc
        for c in range(d):
            phi[i, c] -= step[c]


def _sgd_community_diag_impl(phi, order, weights, means, precisions, max_eig, coef0,
                             lr0, lr_min, step0, total):
    d = phi.shape[1]
    K = means.shape[0]
    for p in prange(order.shape[0]):
        i = order[p]
        scale = coef0 * linear_lr(lr0, lr_min, step0 + p, total)
        step = np.zeros(d)
        for k in range(K):
            w = weights[i, k]
            if w == 0.0:
                continue
            s = min(scale, 1.0 / max_eig[k]) if max_eig[k] > 0 else scale
            for c in range(d):
                step[c] += s * w * precisions[k, c] * (phi[i, c] - means[k, c])
        for c in range(d):
            phi[i, c] -= step[c]


# Reassociation lets LLVM vectorise the length-d dot products (about 2x at
# d=128). No-NaN/no-Inf assumptions stay off so divergence still surfaces as
# non-finite values for the trainer to catch.
_FAST = {"reassoc", "contract", "nsz", "arcp"}


def _pair(impl):
    return (njit(cache=True, fastmath=_FAST)(impl),
            njit(cache=True, parallel=True, fastmath=_FAST)(impl))


sample_walks, sample_walks_par = _pair(_walks_impl)
corpus_negatives = njit(cache=True)(_corpus_negatives_impl)
sgd_edges, sgd_edges_par = _pair(_sgd_edges_impl)
sgd_corpus, sgd_corpus_par = _pair(_sgd_corpus_impl)
corpus_loss, corpus_loss_par = _pair(_corpus_loss_impl)
sgd_community_full, sgd_community_full_par = _pair(_sgd_community_full_impl)
sgd_community_diag, sgd_community_diag_par = _pair(_sgd_community_diag_impl)
