"""Numba kernels for coordinate updates.

All kernels take a block in compressed layout along the coordinate axis
(CSC columns for the primal, CSR rows for the dual). Inner products are
accumulated in float64; stored vectors keep their own dtype. Every engine
routes through the same delta/scatter functions so that single-threaded
runs are bitwise reproducible across engines.
"""

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def primal_delta(indptr, indices, values, y, w, beta, sqnorms, j, lam_n):
    s = 0.0
    for k in range(indptr[j], indptr[j + 1]):
        i = indices[k]
        s += (y[i] - w[i]) * values[k]
    return (s - lam_n * beta[j]) / (sqnorms[j] + lam_n)


@njit(nogil=True, cache=True)
def dual_delta(indptr, indices, values, y, wbar, alpha, sqnorms, j, lam, lam_n):
    s = 0.0
    for k in range(indptr[j], indptr[j + 1]):
        s += wbar[indices[k]] * values[k]
    return (lam * y[j] - s - lam_n * alpha[j]) / (lam_n + sqnorms[j])


@njit(nogil=True, cache=True)
def _lane_reduce(cache):
    v = cache.shape[0] // 2
    while v != 0:
        for u in range(v):
            cache[u] += cache[u + v]
        v //= 2
    return cache[0]


@njit(nogil=True, cache=True)
def primal_delta_lanes(indptr, indices, values, y, w, beta, sqnorms, j, lam_n, n_lanes):
    lo = indptr[j]
    hi = indptr[j + 1]
    cache = np.zeros(n_lanes)
    for u in range(n_lanes):
        s = 0.0
        k = lo + u
        while k < hi:
            i = indices[k]
            s += (y[i] - w[i]) * values[k]
            k += n_lanes
        cache[u] = s
    dot = _lane_reduce(cache)
    return (dot - lam_n * beta[j]) / (sqnorms[j] + lam_n)


@njit(nogil=True, cache=True)
def dual_delta_lanes(indptr, indices, values, y, wbar, alpha, sqnorms, j, lam, lam_n, n_lanes):
    lo = indptr[j]
    hi = indptr[j + 1]
    cache = np.zeros(n_lanes)
    for u in range(n_lanes):
        s = 0.0
        k = lo + u
        while k < hi:
            s += wbar[indices[k]] * values[k]
            k += n_lanes
        cache[u] = s
    dot = _lane_reduce(cache)
    return (lam * y[j] - dot - lam_n * alpha[j]) / (lam_n + sqnorms[j])


@njit(nogil=True, cache=True)
def scatter_add(indptr, indices, values, shared, j, delta):
    for k in range(indptr[j], indptr[j + 1]):
        i = indices[k]
        shared[i] = shared[i] + values[k] * delta


@njit(nogil=True, cache=True)
def primal_epoch(indptr, indices, values, y, w, beta, sqnorms, order, lam_n, deltas):
    for t in range(order.shape[0]):
        j = order[t]
        d = primal_delta(indptr, indices, values, y, w, beta, sqnorms, j, lam_n)
        beta[j] = beta[j] + d
        deltas[j] = d
        scatter_add(indptr, indices, values, w, j, d)


@njit(nogil=True, cache=True)
def dual_epoch(indptr, indices, values, y, wbar, alpha, sqnorms, order, lam, lam_n, deltas):
    for t in range(order.shape[0]):
        j = order[t]
        d = dual_delta(indptr, indices, values, y, wbar, alpha, sqnorms, j, lam, lam_n)
        alpha[j] = alpha[j] + d
        deltas[j] = d
        scatter_add(indptr, indices, values, wbar, j, d)


@njit(nogil=True, cache=True)
def compressed_matvec(indptr, indices, values, x, n_out):
    """y = M x where M is stored compressed along the axis that ``x`` indexes."""
    out = np.zeros(n_out)
    for j in range(indptr.shape[0] - 1):
        xj = np.float64(x[j])
        if xj == 0.0:
            continue
        for k in range(indptr[j], indptr[j + 1]):
            out[indices[k]] += values[k] * xj
    return out


@njit(nogil=True, cache=True)
def compressed_rmatvec(indptr, indices, values, x):
    """out[j] = <slice j, x> for every compressed slice j."""
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for j in range(n):
        s = 0.0
        for k in range(indptr[j], indptr[j + 1]):
            s += values[k] * np.float64(x[indices[k]])
        out[j] = s
    return out


@njit(nogil=True, cache=True)
def apply_update(indptr, indices, values, weights, shared, j, delta):
    weights[j] = weights[j] + delta
    scatter_add(indptr, indices, values, shared, j, delta)
