"""Numba kernels for the tree learners and the lasso coordinate descent.

All kernels are nopython, nogil, and free of global state: randomness comes
from a local splitmix64 stream seeded by the caller, so results are
identical whether kernels run serially or from a thread pool.

Trees use histogram split finding. Features are discretized once per
training set into at most 256 bins; when a feature has no more distinct
values than bins, every distinct value gets its own bin and split search
is exhaustive (identical to classic CART with midpoint thresholds).
Candidate splits sit between adjacent occupied bins, scored by the
within-node sum of squared errors of the two children. Ties are broken
toward the lowest feature index, then the lowest threshold.
"""

import numpy as np
from numba import njit, uint64

U64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
U64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
U64_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _mix(state):
    state = state + U64_GAMMA
    z = state
    z = (z ^ (z >> uint64(30))) * U64_MIX1
    z = (z ^ (z >> uint64(27))) * U64_MIX2
    z = z ^ (z >> uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def bootstrap_indices(n, seed):
    """n draws with replacement from {0..n-1} under splitmix64."""
    out = np.empty(n, dtype=np.int64)
    state = np.uint64(seed)
    for i in range(n):
        state, z = _mix(state)
        out[i] = np.int64(z % np.uint64(n))
    return out


@njit(cache=True, nogil=True)
def grow_tree(codes, edges, edge_offset, n_bins, rows, y,
              max_depth, max_features, min_leaf, seed):
    """Grow one regression tree on the given rows.

    codes       (n_all, p) uint8 bin code per observation and feature,
                Fortran order for fast column access
    edges       flat array of bin-boundary thresholds
    edge_offset (p+1,) offsets into edges per feature; feature j with
                B bins has B-1 boundaries edges[off[j] : off[j]+B-1]
    n_bins      (p,) bins per feature
    rows        row indices this tree trains on (bootstrap or all)
    y           (n_all,) targets

    Returns (feature, threshold, left, right, value) arrays; leaves have
    feature = -1 and carry the node mean in value.
    """
    m_total = len(rows)
    p = codes.shape[1]
    max_nodes = 2 * m_total + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.zeros(max_nodes, dtype=np.float64)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes, dtype=np.float64)

    idx = rows.copy()
    tmp = np.empty(m_total, dtype=np.int64)
    feat_buf = np.empty(p, dtype=np.int64)
    sub = np.empty(p, dtype=np.int64)

    hist_cnt = np.zeros(256, dtype=np.int64)
    hist_sum = np.zeros(256, dtype=np.float64)
    hist_sq = np.zeros(256, dtype=np.float64)

    stack = np.empty((64 + max_nodes, 4), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m_total
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    state = np.uint64(seed)

    while top > 0:
        top -= 1
        node = stack[top, 0]
        s = stack[top, 1]
        e = stack[top, 2]
        depth = stack[top, 3]
        m = e - s

        ysum = 0.0
        ysq = 0.0
        for i in range(s, e):
            yi = y[idx[i]]
            ysum += yi
            ysq += yi * yi
        value[node] = ysum / m
        node_sse = ysq - ysum * ysum / m

        if depth >= max_depth or m < 2 * min_leaf or m < 2 \
                or node_sse <= 1e-12 * max(1.0, ysq):
            continue

        mtry = max_features if max_features < p else p
        if mtry < p:
            for j in range(p):
                feat_buf[j] = j
            for j in range(mtry):
                state, z = _mix(state)
                r = j + np.int64(z % np.uint64(p - j))
                t = feat_buf[j]
                feat_buf[j] = feat_buf[r]
                feat_buf[r] = t
                sub[j] = feat_buf[j]
            sub[:mtry].sort()
        else:
            for j in range(p):
                sub[j] = j

        best_feat = -1
        best_bin = -1
        best_score = np.inf
        # Mathematically tied splits can differ by an ulp depending on
        # summation order; a relative margin keeps the tie-break rule
        # (lowest feature, lowest threshold) independent of that noise.
        tie_eps = 1e-10 * node_sse

        for jj in range(mtry):
            j = sub[jj]
            nb = n_bins[j]
            if nb < 2:
                continue
            col = codes[:, j]
            for b in range(nb):
                hist_cnt[b] = 0
                hist_sum[b] = 0.0
                hist_sq[b] = 0.0
            for i in range(s, e):
                b = col[idx[i]]
                yi = y[idx[i]]
                hist_cnt[b] += 1
                hist_sum[b] += yi
                hist_sq[b] += yi * yi
            cnt_l = 0
            sum_l = 0.0
            sq_l = 0.0
            for b in range(nb - 1):
                cnt_l += hist_cnt[b]
                sum_l += hist_sum[b]
                sq_l += hist_sq[b]
                if cnt_l < min_leaf or cnt_l == 0:
                    continue
                cnt_r = m - cnt_l
                if cnt_r < min_leaf or cnt_r == 0:
                    continue
                if hist_cnt[b] == 0:
                    continue  # same candidate as the previous occupied bin
                sum_r = ysum - sum_l
                sq_r = ysq - sq_l
                score = (sq_l - sum_l * sum_l / cnt_l) + (sq_r - sum_r * sum_r / cnt_r)
                if score < best_score - tie_eps:
                    best_score = score
                    best_feat = j
                    best_bin = b

        if best_feat < 0:
            continue

        thr = edges[edge_offset[best_feat] + best_bin]
        col = codes[:, best_feat]
        nl = 0
        for i in range(s, e):
            if col[idx[i]] <= best_bin:
                tmp[s + nl] = idx[i]
                nl += 1
        nr = 0
        for i in range(s, e):
            if col[idx[i]] > best_bin:
                tmp[s + nl + nr] = idx[i]
                nr += 1
        for i in range(s, e):
            idx[i] = tmp[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feat
        threshold[node] = thr
        left[node] = lid
        right[node] = rid
        stack[top, 0] = lid
        stack[top, 1] = s
        stack[top, 2] = s + nl
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rid
        stack[top, 1] = s + nl
        stack[top, 2] = e
        stack[top, 3] = depth + 1
        top += 1

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], value[:n_nodes])


@njit(cache=True, nogil=True)
def predict_tree(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True, inline="always")
def _cd_sweep(X, r, b, lam, inv_n, active_only):
    """One pass of cyclic coordinate descent; returns the largest update."""
    n, p = X.shape
    max_delta = 0.0
    for j in range(p):
        bj = b[j]
        if active_only and bj == 0.0:
            continue
        col = X[:, j]
        rho = 0.0
        for i in range(n):
            rho += col[i] * r[i]
        zj = bj + rho * inv_n
        if zj > lam:
            bn = zj - lam
        elif zj < -lam:
            bn = zj + lam
        else:
            bn = 0.0
        if bn != bj:
            diff = bj - bn
            for i in range(n):
                r[i] += col[i] * diff
            b[j] = bn
            ad = diff if diff > 0 else -diff
            if ad > max_delta:
                max_delta = ad
    return max_delta


@njit(cache=True, nogil=True)
def lasso_path(X, y, grid, tol, max_sweeps):
    """Cyclic coordinate descent over a descending penalty grid.

    X must be standardized so that each column satisfies sum(x_j^2) = n
    (zero mean, unit population variance); y must be centered. Minimizes
    (1/2n)||y - Xb||^2 + lam * sum|b_j| for every lam in grid, warm-starting
    each solve from the previous one. After each full sweep the descent
    cycles only over currently nonzero coefficients until they settle,
    then verifies with another full sweep.

    Returns (coefs (G, p), sweeps (G,), converged (G,) uint8).
    """
    n, p = X.shape
    n_grid = len(grid)
    coefs = np.zeros((n_grid, p), dtype=np.float64)
    sweeps = np.zeros(n_grid, dtype=np.int64)
    converged = np.zeros(n_grid, dtype=np.uint8)

    b = np.zeros(p, dtype=np.float64)
    r = y.copy()
    inv_n = 1.0 / n

    for g in range(n_grid):
        lam = grid[g]
        it = 0
        while it < max_sweeps:
            it += 1
            max_delta = _cd_sweep(X, r, b, lam, inv_n, False)
            if max_delta < tol:
                converged[g] = 1
                break
            while it < max_sweeps:
                it += 1
                max_delta = _cd_sweep(X, r, b, lam, inv_n, True)
                if max_delta < tol:
                    break
        sweeps[g] = it
        for j in range(p):
            coefs[g, j] = b[j]

    return coefs, sweeps, converged
