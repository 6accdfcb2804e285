"""Compiled inner loops.

The fused trainer kernels repeat the exact float64 operation order of the
routed numpy path, so both executions produce identical bits.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SLOT_SHIFT = np.uint64(20)
_RANK_SHIFT = np.uint64(48)
_SCALE = 2.0 ** -53
_TWO_PI = 2.0 * np.pi


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _pack(rank, slot, draw):
    return (np.uint64(rank) << _RANK_SHIFT) | (np.uint64(slot) << _SLOT_SHIFT) | np.uint64(draw)


@njit(cache=True, inline="always")
def _uniform(key, c):
    h = _mix(key ^ _mix(c * _GOLDEN + _GOLDEN))
    return np.float64(h >> np.uint64(11)) * _SCALE


@njit(cache=True)
def draw_ids(key, ranks, slots, feature, k, cdf):
    n = ranks.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    last = cdf.shape[0] - 1
    for s in range(n):
        for j in range(k):
            u = _uniform(key, _pack(ranks[s], slots[s], (feature << 10) + j))
            lo, hi = 0, cdf.shape[0]
            while lo < hi:  # first index with cdf > u
                mid = (lo + hi) >> 1
                if cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            out[s, j] = min(lo, last)
    return out


@njit(cache=True)
def draw_normals(key, ranks, slots, dim):
    n = ranks.shape[0]
    out = np.empty((n, dim), dtype=np.float32)
    for s in range(n):
        for d in range(dim):
            c = _pack(ranks[s], slots[s], d) << np.uint64(1)
            u1 = _uniform(key, c)
            u2 = _uniform(key, c | np.uint64(1))
            out[s, d] = np.float32(np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(_TWO_PI * u2))
    return out


@njit(cache=True)
def draw_labels(key, ranks, slots, logits):
    n = ranks.shape[0]
    out = np.empty(n, dtype=np.int8)
    for s in range(n):
        p = 1.0 / (1.0 + np.exp(-logits[s]))
        out[s] = 1 if _uniform(key, _pack(ranks[s], slots[s], 0)) < p else 0
    return out


@njit(cache=True)
def truth_logits(bias, contribs_flat, offsets, ids_flat, id_offsets, ks, dense, dense_w):
    n = dense.shape[0]
    out = np.empty(n)
    for s in range(n):
        acc = bias
        for f in range(ks.shape[0]):
            k = ks[f]
            for j in range(k):
                acc = acc + contribs_flat[offsets[f] + ids_flat[id_offsets[f] + s * k + j]]
        for j in range(dense.shape[1]):
            acc = acc + np.float64(dense[s, j]) * dense_w[j]
        out[s] = acc
    return out


@njit(cache=True)
def pool_fused(W, ids, group, lo, hi, out):
    """Sum-pool with per-shard partials added in the given shard order.

    Mirrors: partial = where(in_shard, row, 0).sum(axis=1); pooled = p0 + p1 + ...
    """
    n, k = ids.shape
    D = W.shape[2]
    S = lo.shape[0]
    part = np.empty(D)
    for s in range(n):
        m = group[s]
        for si in range(S):
            for d in range(D):
                part[d] = 0.0
            for j in range(k):
                r = ids[s, j]
                inside = lo[si] <= r < hi[si]
                for d in range(D):
                    v = np.float64(W[m, r, d]) if inside else 0.0
                    if j == 0:
                        part[d] = v
                    else:
                        part[d] = part[d] + v
            if k == 0:
                for d in range(D):
                    part[d] = 0.0
            for d in range(D):
                if si == 0:
                    out[s, d] = part[d]
                else:
                    out[s, d] = out[s, d] + part[d]


@njit(cache=True)
def update_fused(W, V, ids, group, grads, group_batch, eta, eps, c, sgd, acc, seen, dirty):
    """Group-mean row gradients accumulated in sample order, then one optimizer step per touched row.

    ``acc`` (M, R, D) float64 and ``seen`` (M, R) bool are scratch buffers that
    must be zero/False on entry; they are restored before returning.
    """
    n, k = ids.shape
    D = W.shape[2]
    keys_m = np.empty(n * k, dtype=np.int64)
    keys_r = np.empty(n * k, dtype=np.int64)
    nk = 0
    for s in range(n):
        m = group[s]
        for j in range(k):
            r = ids[s, j]
            if not seen[m, r]:
                seen[m, r] = True
                keys_m[nk] = m
                keys_r[nk] = r
                nk += 1
            for d in range(D):
                acc[m, r, d] = acc[m, r, d] + grads[s, d]
    g = np.empty(D)
    for t in range(nk):
        m, r = keys_m[t], keys_r[t]
        for d in range(D):
            g[d] = acc[m, r, d] / group_batch
            acc[m, r, d] = 0.0
        seen[m, r] = False
        dirty[r] = True
        if sgd:
            for d in range(D):
                W[m, r, d] = np.float32(np.float64(W[m, r, d]) - eta * g[d])
        else:
            sq = g[0] * g[0]
            for d in range(1, D):
                sq = sq + g[d] * g[d]
            v_new = np.float32(np.float64(V[m, r]) + sq)
            lr = eta / (np.sqrt(np.float64(v_new) / c) + eps)
            for d in range(D):
                W[m, r, d] = np.float32(np.float64(W[m, r, d]) - lr * g[d])
            V[m, r] = v_new


@njit(cache=True)
def sync_fused(W, V, dirty):
    """Replica mean of the dirty rows: ascending replica order, float64 accumulation."""
    M, R, D = W.shape
    for r in range(R):
        if not dirty[r]:
            continue
        for d in range(D):
            a = np.float64(W[0, r, d])
            for m in range(1, M):
                a += W[m, r, d]
            a /= M
            v = np.float32(a)
            for m in range(M):
                W[m, r, d] = v
        a = np.float64(V[0, r])
        for m in range(1, M):
            a += V[m, r]
        a /= M
        v = np.float32(a)
        for m in range(M):
            V[m, r] = v
        dirty[r] = False
