"""Compiled inner loops for tree growing and forest voting.

Per-node randomness uses splitmix64 seeded from ``(tree_seed, node_id)`` where
``node_id`` is the node's preorder index, so a node's feature subset does not
depend on how much randomness its siblings consumed.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0


@njit(cache=True, nogil=True)
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def node_stream(tree_seed, node_id):
    return _mix(tree_seed ^ (np.uint64(node_id + 1) * _GOLDEN))


@njit(cache=True, nogil=True)
def _next(state):
    # returns (new_state, output)
    s = state + _GOLDEN
    return s, _mix(s)


@njit(cache=True, nogil=True)
def sample_features(tree_seed, node_id, n_features, mtry, perm):
    """First ``mtry`` entries of ``perm`` become a uniform sample without replacement."""
    for k in range(n_features):
        perm[k] = k
    state = node_stream(tree_seed, node_id)
    for k in range(mtry):
        state, r = _next(state)
        u = np.float64(r >> _S11) * _TWO53
        pick = k + int(u * (n_features - k))
        tmp = perm[k]
        perm[k] = perm[pick]
        perm[pick] = tmp


@njit(cache=True, nogil=True)
def _gini_numer(counts, n):
    # n * gini = n - sum(c^2) / n
    s = 0.0
    for c in counts:
        s += np.float64(c) * c
    return n - s / n


@njit(cache=True, nogil=True)
def best_split(X, y, rows, n_classes, features, order_by_feature, mult):
    """Exhaustive (feature, midpoint) search over ``features`` for the sample ``rows``.

    Returns ``(feature, threshold, impurity_numerator)``; feature is -1 when no
    split separates the rows. Impurity numerator is n_L*gini_L + n_R*gini_R.
    Earlier features and smaller thresholds win exact ties.

    Large nodes walk the presorted ``order_by_feature`` (shape F x N) using the
    row multiplicities in ``mult`` (all zero on entry and on return); small
    nodes sort their own values. Both visit candidate thresholds in ascending
    order and compute identical impurities.
    """
    n = rows.shape[0]
    n_all = X.shape[0]
    total = np.zeros(n_classes, dtype=np.int64)
    for r in range(n):
        total[y[rows[r]]] += 1
    sq_total = 0.0
    for c in range(n_classes):
        sq_total += np.float64(total[c]) * total[c]
    best_f = -1
    best_t = 0.0
    best_g = np.inf
    left = np.zeros(n_classes, dtype=np.int64)
    scan = n * np.log2(n + 1.0) > n_all
    if scan:
        for r in range(n):
            mult[rows[r]] += 1
    else:
        vals = np.empty(n)
    for f in features:
        for c in range(n_classes):
            left[c] = 0
        sq_l = 0.0
        sq_r = sq_total
        nl = 0.0
        if scan:
            started = False
            prev = 0.0
            order = order_by_feature[f]
            for k in range(n_all):
                r = order[k]
                w = mult[r]
                if w == 0:
                    continue
                v = X[r, f]
                if started and v != prev:
                    nr = n - nl
                    g = (nl - sq_l / nl) + (nr - sq_r / nr)
                    if g < best_g:
                        best_g = g
                        best_f = f
                        t = 0.5 * (prev + v)
                        if t >= v:
                            t = prev
                        best_t = t
                c = y[r]
                lc = left[c]
                rc = total[c] - lc
                sq_l += 2.0 * lc * w + np.float64(w) * w
                sq_r += -2.0 * rc * w + np.float64(w) * w
                left[c] = lc + w
                nl += w
                prev = v
                started = True
        else:
            for r in range(n):
                vals[r] = X[rows[r], f]
            order = np.argsort(vals)
            for k in range(n - 1):
                c = y[rows[order[k]]]
                lc = left[c]
                rc = total[c] - lc
                sq_l += 2.0 * lc + 1.0
                sq_r -= 2.0 * rc - 1.0
                left[c] = lc + 1
                nl += 1.0
                a = vals[order[k]]
                b = vals[order[k + 1]]
                if a == b:
                    continue
                nr = n - nl
                g = (nl - sq_l / nl) + (nr - sq_r / nr)
                if g < best_g:
                    best_g = g
                    best_f = f
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_t = t
    if scan:
        for r in range(n):
            mult[rows[r]] = 0
    return best_f, best_t, best_g


@njit(cache=True, nogil=True)
def presort(X):
    """Row order of every feature column, shape (F, N)."""
    out = np.empty((X.shape[1], X.shape[0]), dtype=np.int64)
    for f in range(X.shape[1]):
        out[f] = np.argsort(X[:, f], kind="mergesort")
    return out


@njit(cache=True, nogil=True)
def grow_tree(X, y, sample, n_classes, mtry, min_leaf, tree_seed, order_by_feature):
    """Grow one CART classification tree on the row multiset ``sample``.

    Nodes are numbered in preorder. Leaves have feature -1 and children -1.
    """
    n = sample.shape[0]
    n_features = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    hist = np.zeros((cap, n_classes), dtype=np.int32)
    rows = sample.copy()
    buf = np.empty(n, dtype=sample.dtype)
    perm = np.empty(n_features, dtype=np.int64)
    counts = np.zeros(n_classes, dtype=np.int64)
    mult = np.zeros(X.shape[0], dtype=np.int64)

    # stack entries: start, end, parent, side (0 root, 1 left, 2 right)
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = -1
    stack[0, 3] = 0
    top = 1
    n_nodes = 0
    while top > 0:
        top -= 1
        start = stack[top, 0]
        end = stack[top, 1]
        parent = stack[top, 2]
        side = stack[top, 3]
        node = n_nodes
        n_nodes += 1
        if side == 1:
            left[parent] = node
        elif side == 2:
            right[parent] = node

        m = end - start
        for c in range(n_classes):
            counts[c] = 0
        for r in range(start, end):
            counts[y[rows[r]]] += 1
        pure = False
        for c in range(n_classes):
            hist[node, c] = counts[c]
            if counts[c] == m:
                pure = True
        if pure or m < min_leaf:
            continue

        sample_features(tree_seed, node, n_features, mtry, perm)
        seg = rows[start:end]
        f, t, g = best_split(X, y, seg, n_classes, perm[:mtry], order_by_feature, mult)
        if f < 0 or not g < _gini_numer(counts, m) - 1e-12 * m:
            continue

        nl = 0
        nr = 0
        for r in range(start, end):
            v = rows[r]
            if X[v, f] <= t:
                rows[start + nl] = v
                nl += 1
            else:
                buf[nr] = v
                nr += 1
        for r in range(nr):
            rows[start + nl + r] = buf[r]
        feature[node] = f
        threshold[node] = t
        # right pushed first so the left subtree is numbered next (preorder)
        stack[top, 0] = start + nl
        stack[top, 1] = end
        stack[top, 2] = node
        stack[top, 3] = 2
        top += 1
        stack[top, 0] = start
        stack[top, 1] = start + nl
        stack[top, 2] = node
        stack[top, 3] = 1
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), hist[:n_nodes].copy())


@njit(cache=True, nogil=True)
def leaf_classes(hist):
    """Plurality class of every node's histogram; ties go to the lower class index."""
    out = np.empty(hist.shape[0], dtype=np.int32)
    for i in range(hist.shape[0]):
        best = 0
        for c in range(1, hist.shape[1]):
            if hist[i, c] > hist[i, best]:
                best = c
        out[i] = best
    return out


@njit(cache=True, nogil=True)
def count_votes(X, offsets, feature, threshold, left, right, vote, n_classes):
    """Per-row vote counts over all packed trees; tree k owns nodes offsets[k]:offsets[k+1]."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    votes = np.zeros((n, n_classes), dtype=np.int64)
    for i in range(n):
        for k in range(n_trees):
            base = offsets[k]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            votes[i, vote[base + node]] += 1
    return votes
