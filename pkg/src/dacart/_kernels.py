"""Compiled inner loops for tree growth, prediction and weakest-link pruning.

Trees live in flat arrays indexed by node id. A parent always has a smaller
id than its children, so a reverse id scan visits children before parents.
Leaves have ``feature == -1``.
"""
import numpy as np
from numba import njit

# two gains closer than this (relative) are a tie
TIE_RTOL = 1e-12
# child means closer than this (relative) are treated as equal: zero gain
MEAN_RTOL = 1e-12


@njit(cache=True)
def exact_sum(values):
    """Correctly rounded sum (Shewchuk partials, the algorithm behind
    ``math.fsum``); the result does not depend on the order of ``values``."""
    partials = np.empty(values.shape[0] + 1)
    n = 0
    for x in values:
        i = 0
        for j in range(n):
            y = partials[j]
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo != 0.0:
                partials[i] = lo
                i += 1
            x = hi
        partials[i] = x
        n = i + 1
    if n == 0:
        return 0.0
    # round the exact sum of the partials once, half-way cases included
    n -= 1
    hi = partials[n]
    lo = 0.0
    while n > 0:
        x = hi
        n -= 1
        y = partials[n]
        hi = x + y
        lo = y - (hi - x)
        if lo != 0.0:
            break
    if n > 0 and ((lo < 0.0 and partials[n - 1] < 0.0) or (lo > 0.0 and partials[n - 1] > 0.0)):
        y = lo * 2.0
        x = hi + y
        if y == x - hi:
            hi = x
    return hi


@njit(cache=True)
def _node_stats(rows, y, w, gain_scale):
    k = rows.shape[0]
    wy = np.empty(k)
    ww = np.empty(k)
    for i in range(k):
        r = rows[i]
        ww[i] = w[r]
        wy[i] = w[r] * y[r]
    mass = exact_sum(ww)
    value = exact_sum(wy) / mass
    for i in range(k):
        r = rows[i]
        d = y[r] - value
        wy[i] = w[r] * d * d
    return mass, value, exact_sum(wy) * gain_scale


@njit(cache=True)
def _best_split(X, y, w, idx, candidates, start, end, min_node_weight, min_gain, gain_scale):
    best_gain = -1.0
    best_tol = 0.0
    best_k = -1
    best_thr = 0.0
    for k in range(candidates.shape[0]):
        f = candidates[k]
        wt = 0.0
        st = 0.0
        for i in range(start, end):
            r = idx[k, i]
            wt += w[r]
            st += w[r] * y[r]
        wl = 0.0
        sl = 0.0
        for i in range(start, end - 1):
            r = idx[k, i]
            wl += w[r]
            sl += w[r] * y[r]
            xv = X[f, r]
            xn = X[f, idx[k, i + 1]]
            if not xn > xv:
                continue
            wr = wt - wl
            if wl < min_node_weight or wr < min_node_weight:
                continue
            ml = sl / wl
            mr = (st - sl) / wr
            diff = ml - mr
            if abs(diff) <= MEAN_RTOL * max(abs(ml), abs(mr)):
                continue
            g = gain_scale * (wl * wr / wt) * diff * diff
            if not (g > min_gain and g > 0.0):
                continue
            # the same partition reached through another feature differs only by
            # rounding, which grows as the two means approach each other
            tol = TIE_RTOL * max(1.0, 4.0 * max(abs(ml), abs(mr)) / abs(diff))
            if best_k < 0 or g > best_gain * (1.0 + max(tol, best_tol)):
                thr = 0.5 * xv + 0.5 * xn
                if not thr < xn:
                    thr = xv
                best_gain = g
                best_tol = tol
                best_k = k
                best_thr = thr
    return best_k, best_thr, best_gain


@njit(cache=True)
def build_tree(X, y, w, order, candidates, max_depth, min_node_weight, min_gain, gain_scale):
    """Grow a tree depth-first.

    ``X`` is ``(p, n)``; ``order[k]`` lists all rows sorted by feature
    ``candidates[k]``. Returns the node arrays trimmed to the node count.
    """
    n = y.shape[0]
    q = candidates.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    mass = np.zeros(cap)
    count = np.zeros(cap, np.int64)
    gain = np.zeros(cap)
    risk = np.zeros(cap)

    # one segment per candidate feature plus one in original row order
    idx = np.empty((q + 1, n), np.int64)
    for k in range(q):
        idx[k] = order[k]
    idx[q] = np.arange(n)
    goes_left = np.zeros(n, np.bool_)
    buf = np.empty(n, np.int64)

    st_node = np.empty(cap, np.int64)
    st_start = np.empty(cap, np.int64)
    st_end = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    sp = 1
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]

        m, v, rk = _node_stats(idx[q, start:end], y, w, gain_scale)
        mass[node] = m
        value[node] = v
        risk[node] = rk
        count[node] = end - start

        if depth >= max_depth or m < 2.0 * min_node_weight or end - start < 2 or q == 0:
            continue
        bk, thr, g = _best_split(X, y, w, idx, candidates, start, end, min_node_weight, min_gain, gain_scale)
        if bk < 0:
            continue
        f = candidates[bk]
        feature[node] = f
        threshold[node] = thr
        gain[node] = g

        for i in range(start, end):
            r = idx[q, i]
            goes_left[r] = X[f, r] <= thr
        n_left = 0
        for k in range(q + 1):
            a = 0
            for i in range(start, end):
                r = idx[k, i]
                if goes_left[r]:
                    buf[a] = r
                    a += 1
            n_left = a
            for i in range(start, end):
                r = idx[k, i]
                if not goes_left[r]:
                    buf[a] = r
                    a += 1
            for i in range(end - start):
                idx[k, start + i] = buf[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[node] = lid
        right[node] = rid
        # push right first so the left subtree is expanded first
        st_node[sp] = rid
        st_start[sp] = start + n_left
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = lid
        st_start[sp] = start
        st_end[sp] = start + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
        mass[:n_nodes].copy(),
        count[:n_nodes].copy(),
        gain[:n_nodes].copy(),
        risk[:n_nodes].copy(),
    )


@njit(cache=True)
def predict(feature, threshold, left, right, value, X):
    m = X.shape[1]
    out = np.empty(m)
    for i in range(m):
        node = 0
        while feature[node] >= 0:
            if X[feature[node], i] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def predict_pruned(feature, threshold, left, right, value, collapse, alphas, X):
    """Predictions of the subtree pruned at each ``alphas[j]``; shape ``(len(alphas), m)``.

    A node acts as a leaf at penalty ``a`` once ``collapse[node] <= a``.
    ``alphas`` must be ascending. Collapse penalties never increase going
    down a path, so the stopping node only moves rootwards as ``a`` grows.
    """
    m = X.shape[1]
    n_alpha = alphas.shape[0]
    out = np.empty((n_alpha, m))
    path = np.empty(feature.shape[0], np.int64)
    for i in range(m):
        node = 0
        depth = 0
        path[0] = 0
        while feature[node] >= 0:
            if X[feature[node], i] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            depth += 1
            path[depth] = node
        ptr = depth
        for j in range(n_alpha):
            a = alphas[j]
            while ptr > 0 and collapse[path[ptr - 1]] <= a:
                ptr -= 1
            out[j, i] = value[path[ptr]]
    return out


@njit(cache=True)
def weakest_link(left, right, risk):
    """Cost-complexity sequence by repeated weakest-link collapse.

    Returns ``(collapse, alphas)``: the penalty at which each internal node
    becomes a leaf (``inf`` for leaves) and the increasing distinct penalties
    at which collapses happen.
    """
    m = left.shape[0]
    collapse = np.full(m, np.inf)
    is_leaf = left < 0
    dead = np.zeros(m, np.bool_)
    sub_risk = np.empty(m)
    n_leaves = np.empty(m, np.int64)
    g = np.full(m, np.inf)
    alphas = np.empty(m + 1)
    n_alpha = 0
    prev = 0.0
    stack = np.empty(m, np.int64)
    while True:
        for t in range(m - 1, -1, -1):
            if is_leaf[t] or dead[t]:
                sub_risk[t] = risk[t]
                n_leaves[t] = 1
            else:
                sub_risk[t] = sub_risk[left[t]] + sub_risk[right[t]]
                n_leaves[t] = n_leaves[left[t]] + n_leaves[right[t]]
        gmin = np.inf
        for t in range(m):
            if is_leaf[t] or dead[t]:
                g[t] = np.inf
                continue
            drop = risk[t] - sub_risk[t]
            if drop < 0.0:
                drop = 0.0
            g[t] = drop / (n_leaves[t] - 1)
            if g[t] < gmin:
                gmin = g[t]
        if gmin == np.inf:
            break
        a = max(gmin, prev)
        cut = a * (1.0 + TIE_RTOL)
        for t in range(m):
            if is_leaf[t] or dead[t] or g[t] > cut:
                continue
            collapse[t] = a
            is_leaf[t] = True
            sp = 0
            stack[sp] = left[t]
            sp += 1
            stack[sp] = right[t]
            sp += 1
            while sp > 0:
                sp -= 1
                u = stack[sp]
                if collapse[u] > a:
                    collapse[u] = a
                if left[u] >= 0 and not dead[u]:
                    dead[u] = True
                    stack[sp] = left[u]
                    sp += 1
                    stack[sp] = right[u]
                    sp += 1
                dead[u] = True
        alphas[n_alpha] = a
        n_alpha += 1
        prev = a
    return collapse, alphas[:n_alpha].copy()
