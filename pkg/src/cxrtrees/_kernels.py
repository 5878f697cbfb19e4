"""Numba kernels for tree growing and traversal.

Trees are emitted into preallocated flat arrays in preorder (left subtree
first), so node numbering is a pure function of the inputs.  Kernels release
the GIL; every source of randomness is the caller-supplied splitmix64 stream
state, which makes results identical for any thread count.

The splitmix64 constants must match cxrtrees.hashing.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 2.0**-53


@njit(cache=True, nogil=True, inline="always")
def _fin64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True, inline="always")
def _next_u64(state):
    state = state + _GOLDEN
    return state, _fin64(state)


@njit(cache=True, nogil=True)
def kernel_uniform_stream(state, count, out):
    """Reference stream for cross-checking against hashing.uniform_stream."""
    for i in range(count):
        state, h = _next_u64(state)
        out[i] = np.float64(h >> np.uint64(11)) * _INV_2_53
    return state


@njit(cache=True, nogil=True)
def grow_variance_tree(
    X,
    y,
    rows,
    state,
    max_depth,
    min_split,
    min_leaf,
    k_feat,
    feature,
    threshold,
    value,
    left,
    right,
):
    """Grow one variance-reduction regression tree over X[rows].

    rows may contain repeats (bootstrap); leaf values are target means.
    A node splits only if the best split strictly reduces the summed squared
    error and keeps min_leaf samples on each side.  Returns the node count.
    """
    n = rows.shape[0]
    d = X.shape[1]
    order = rows.copy()

    cap = feature.shape[0]
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_isleft = np.empty(cap, np.uint8)
    top = 0
    st_start[top] = 0
    st_end[top] = n
    st_depth[top] = 0
    st_parent[top] = -1
    st_isleft[top] = 0
    top += 1

    feat_pool = np.empty(d, np.int64)
    n_nodes = 0

    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        parent = st_parent[top]
        isleft = st_isleft[top]

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if isleft == 1:
                left[parent] = node
            else:
                right[parent] = node

        nn = end - start
        sy = 0.0
        sy2 = 0.0
        ymin = y[order[start]]
        ymax = ymin
        for i in range(start, end):
            yv = y[order[i]]
            sy += yv
            sy2 += yv * yv
            if yv < ymin:
                ymin = yv
            if yv > ymax:
                ymax = yv
        # Constant targets have an exact mean; skip the summation rounding.
        mean = ymin if ymin == ymax else sy / nn

        if depth >= max_depth or nn < min_split or ymin == ymax:
            feature[node] = -1
            threshold[node] = 0.0
            value[node] = mean
            left[node] = 0
            right[node] = 0
            continue

        parent_sse = sy2 - sy * sy / nn
        best_gain = 0.0
        best_f = -1
        best_t = 0.0

        kk = k_feat if k_feat < d else d
        for i in range(d):
            feat_pool[i] = i
        for i in range(kk):
            state, r = _next_u64(state)
            j = i + np.int64(r % np.uint64(d - i))
            tmpf = feat_pool[i]
            feat_pool[i] = feat_pool[j]
            feat_pool[j] = tmpf

        col = np.empty(nn, np.float64)
        ys = np.empty(nn, np.float64)
        for fi in range(kk):
            f = feat_pool[fi]
            for i in range(nn):
                col[i] = np.float64(X[order[start + i], f])
            sidx = np.argsort(col)
            for i in range(nn):
                ys[i] = y[order[start + sidx[i]]]
            cy = 0.0
            cy2 = 0.0
            for i in range(nn - 1):
                yv = ys[i]
                cy += yv
                cy2 += yv * yv
                a = col[sidx[i]]
                b = col[sidx[i + 1]]
                if a == b:
                    continue
                nl = i + 1
                nr = nn - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                ry = sy - cy
                ry2 = sy2 - cy2
                sse_l = cy2 - cy * cy / nl
                sse_r = ry2 - ry * ry / nr
                gain = parent_sse - sse_l - sse_r
                if gain > best_gain:
                    t = a + (b - a) * 0.5
                    if t >= b:
                        t = a
                    best_gain = gain
                    best_f = f
                    best_t = t

        if best_f < 0:
            feature[node] = -1
            threshold[node] = 0.0
            value[node] = mean
            left[node] = 0
            right[node] = 0
            continue

        buf = np.empty(nn, np.int64)
        nl = 0
        for i in range(start, end):
            if np.float64(X[order[i], best_f]) <= best_t:
                buf[nl] = order[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if not (np.float64(X[order[i], best_f]) <= best_t):
                buf[nr] = order[i]
                nr += 1
        for i in range(nn):
            order[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_t
        value[node] = 0.0
        # Right pushed first so the left child pops next (preorder).
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_isleft[top] = 0
        top += 1
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_isleft[top] = 1
        top += 1

    return n_nodes


@njit(cache=True, nogil=True)
def grow_gain_tree(
    X,
    grad,
    hess,
    lam,
    leaf_scale,
    max_depth,
    feature,
    threshold,
    value,
    left,
    right,
):
    """Grow one second-order boosted tree on per-sample (gradient, hessian).

    Split gain is GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam); a node splits
    only on strictly positive gain.  Leaf weight is -G/(H+lam) * leaf_scale.
    All features are candidates; no row subsampling.  Returns node count.
    """
    n = X.shape[0]
    d = X.shape[1]
    order = np.arange(n)

    cap = feature.shape[0]
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_parent = np.empty(cap, np.int64)
    st_isleft = np.empty(cap, np.uint8)
    top = 0
    st_start[top] = 0
    st_end[top] = n
    st_depth[top] = 0
    st_parent[top] = -1
    st_isleft[top] = 0
    top += 1

    n_nodes = 0
    while top > 0:
        top -= 1
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]
        parent = st_parent[top]
        isleft = st_isleft[top]

        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if isleft == 1:
                left[parent] = node
            else:
                right[parent] = node

        nn = end - start
        gsum = 0.0
        hsum = 0.0
        for i in range(start, end):
            gsum += grad[order[i]]
            hsum += hess[order[i]]

        denom = hsum + lam
        leaf_w = 0.0 if denom <= 0.0 else -gsum / denom * leaf_scale

        if depth >= max_depth or nn < 2:
            feature[node] = -1
            threshold[node] = 0.0
            value[node] = leaf_w
            left[node] = 0
            right[node] = 0
            continue

        parent_score = 0.0 if denom <= 0.0 else gsum * gsum / denom
        best_gain = 0.0
        best_f = -1
        best_t = 0.0

        col = np.empty(nn, np.float64)
        gs = np.empty(nn, np.float64)
        hs = np.empty(nn, np.float64)
        for f in range(d):
            for i in range(nn):
                col[i] = np.float64(X[order[start + i], f])
            sidx = np.argsort(col)
            for i in range(nn):
                gs[i] = grad[order[start + sidx[i]]]
                hs[i] = hess[order[start + sidx[i]]]
            cg = 0.0
            ch = 0.0
            for i in range(nn - 1):
                cg += gs[i]
                ch += hs[i]
                a = col[sidx[i]]
                b = col[sidx[i + 1]]
                if a == b:
                    continue
                dl = ch + lam
                dr = (hsum - ch) + lam
                score_l = 0.0 if dl <= 0.0 else cg * cg / dl
                rg = gsum - cg
                score_r = 0.0 if dr <= 0.0 else rg * rg / dr
                gain = score_l + score_r - parent_score
                if gain > best_gain:
                    t = a + (b - a) * 0.5
                    if t >= b:
                        t = a
                    best_gain = gain
                    best_f = f
                    best_t = t

        if best_f < 0:
            feature[node] = -1
            threshold[node] = 0.0
            value[node] = leaf_w
            left[node] = 0
            right[node] = 0
            continue

        buf = np.empty(nn, np.int64)
        nl = 0
        for i in range(start, end):
            if np.float64(X[order[i], best_f]) <= best_t:
                buf[nl] = order[i]
                nl += 1
        nr = nl
        for i in range(start, end):
            if not (np.float64(X[order[i], best_f]) <= best_t):
                buf[nr] = order[i]
                nr += 1
        for i in range(nn):
            order[start + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_t
        value[node] = 0.0
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_isleft[top] = 0
        top += 1
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        st_parent[top] = node
        st_isleft[top] = 1
        top += 1

    return n_nodes


@njit(cache=True, nogil=True)
def accumulate_tree(X, feature, threshold, value, left, right, out):
    """Add each sample's leaf value to out (a running ensemble sum)."""
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if np.float64(X[i, feature[node]]) <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] += value[node]


@njit(cache=True, nogil=True)
def leaf_of(X, rows, feature, threshold, left, right, out):
    """Leaf node index reached by each of X[rows]."""
    for i in range(rows.shape[0]):
        r = rows[i]
        node = 0
        while feature[node] >= 0:
            if np.float64(X[r, feature[node]]) <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
