"""Compiled kernels for variance-reduction regression trees.

Features are pre-binned (exact midpoints between distinct values when a feature
has at most ``max_bins`` of them, quantile midpoints otherwise), so a split is
"bin <= b goes left", which in raw units is ``x <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

LEAF = -1


class BinMapper:
    def __init__(self, max_bins=255):
        if not 2 <= max_bins <= 65535:
            raise ValueError("max_bins must lie in [2, 65535]")
        self.max_bins = max_bins

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.edges_ = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if len(u) <= self.max_bins:
                e = (u[:-1] + u[1:]) / 2.0
            else:
                q = np.quantile(X[:, j], np.linspace(0.0, 1.0, self.max_bins + 1)[1:-1], method="midpoint")
                e = np.unique(q)
            self.edges_.append(e.astype(np.float64))
        self.n_bins_ = np.array([len(e) + 1 for e in self.edges_], dtype=np.int64)
        width = max(1, max(len(e) for e in self.edges_)) if self.edges_ else 1
        self.edge_table_ = np.full((len(self.edges_), width), np.inf)
        for j, e in enumerate(self.edges_):
            self.edge_table_[j, : len(e)] = e
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape, dtype=np.uint16)
        for j, e in enumerate(self.edges_):
            out[:, j] = np.searchsorted(e, X[:, j], side="left")
        return np.ascontiguousarray(out)


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    gain: np.ndarray

    FIELDS = ("feature", "threshold", "left", "right", "value", "n_node", "gain")

    @property
    def n_nodes(self):
        return len(self.value)

    @property
    def depth(self):
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.left[i] != LEAF:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
        return int(d.max()) if self.n_nodes else 0

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out

    def feature_gains(self, n_features):
        g = np.zeros(n_features)
        split = self.feature >= 0
        np.add.at(g, self.feature[split], self.gain[split])
        return g


@nb.njit(cache=True)
def _rand(state):
    # splitmix64
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, nogil=True)
def _best_split_feature(Xb, y, idx, start, end, f, nb_f, min_leaf, cnt, sm, total_n, total_s):
    """Best 'bin <= b' boundary for one feature; returns (gain, b) or (-1, -1)."""
    n_node = end - start
    best_gain = -1.0
    best_b = -1
    parent = total_s * total_s / total_n
    if n_node * 4 < nb_f:
        # few rows relative to bins: sort the node's bins instead of scanning a histogram
        bins = np.empty(n_node, dtype=np.int64)
        for i in range(n_node):
            bins[i] = Xb[idx[start + i], f]
        order = np.argsort(bins, kind="mergesort")
        nl = 0.0
        sl = 0.0
        i = 0
        while i < n_node:
            b = bins[order[i]]
            while i < n_node and bins[order[i]] == b:
                nl += 1.0
                sl += y[idx[start + order[i]]]
                i += 1
            if i >= n_node:
                break
            nr = total_n - nl
            if nl >= min_leaf and nr >= min_leaf:
                sr = total_s - sl
                g = sl * sl / nl + sr * sr / nr - parent
                if g > best_gain:
                    best_gain = g
                    best_b = b
        return best_gain, best_b
    for b in range(nb_f):
        cnt[b] = 0.0
        sm[b] = 0.0
    for i in range(start, end):
        r = idx[i]
        b = Xb[r, f]
        cnt[b] += 1.0
        sm[b] += y[r]
    nl = 0.0
    sl = 0.0
    for b in range(nb_f - 1):
        if cnt[b] == 0.0:
            continue
        nl += cnt[b]
        sl += sm[b]
        nr = total_n - nl
        if nr < min_leaf:
            break
        if nl < min_leaf or nr <= 0.0:
            continue
        sr = total_s - sl
        g = sl * sl / nl + sr * sr / nr - parent
        if g > best_gain:
            best_gain = g
            best_b = b
    return best_gain, best_b


@nb.njit(cache=True, nogil=True)
def _build(Xb, n_bins, y, rows, max_depth, min_leaf, mtry, seed):
    m = rows.shape[0]
    p = Xb.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    bin_thr = np.full(cap, -1, dtype=np.int64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    n_node = np.zeros(cap)
    gain = np.zeros(cap)

    idx = rows.copy()
    tmp = np.empty(m, dtype=np.int64)
    max_nb = 2
    for j in range(p):
        if n_bins[j] > max_nb:
            max_nb = n_bins[j]
    cnt = np.zeros(max_nb)
    sm = np.zeros(max_nb)
    feats = np.arange(p)
    state = np.zeros(1, dtype=np.uint64)
    state[0] = np.uint64(seed)

    # stack of (node, start, end, depth)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = m
    st_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        start = st_start[top]
        end = st_end[top]
        depth = st_depth[top]

        s = 0.0
        ss = 0.0
        for i in range(start, end):
            v = y[idx[i]]
            s += v
            ss += v * v
        cnt_node = float(end - start)
        value[node] = s / cnt_node
        n_node[node] = cnt_node

        if (max_depth >= 0 and depth >= max_depth) or cnt_node < 2.0 * min_leaf:
            continue
        sse = ss - s * s / cnt_node
        if sse <= 1e-12 * ss or sse <= 0.0:
            continue

        k = p
        if mtry < p:
            for j in range(mtry):
                r = j + np.int64(_rand(state) % np.uint64(p - j))
                t = feats[j]
                feats[j] = feats[r]
                feats[r] = t
            k = mtry
            feats[:k].sort()
        else:
            for j in range(p):
                feats[j] = j

        best_gain = -1.0
        best_f = -1
        best_b = -1
        for jj in range(k):
            f = feats[jj]
            if n_bins[f] < 2:
                continue
            g, b = _best_split_feature(Xb, y, idx, start, end, f, n_bins[f], min_leaf, cnt, sm, cnt_node, s)
            if b >= 0 and g > best_gain:
                best_gain = g
                best_f = f
                best_b = b
        if best_f < 0 or best_gain <= 1e-12 * ss:
            continue

        # stable partition keeps summation order reproducible
        nl = 0
        nr = 0
        for i in range(start, end):
            r = idx[i]
            if Xb[r, best_f] <= best_b:
                idx[start + nl] = r
                nl += 1
            else:
                tmp[nr] = r
                nr += 1
        for i in range(nr):
            idx[start + nl + i] = tmp[i]

        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        bin_thr[node] = best_b
        left[node] = lc
        right[node] = rc
        gain[node] = best_gain

        st_node[top] = rc
        st_start[top] = start + nl
        st_end[top] = end
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = lc
        st_start[top] = start
        st_end[top] = start + nl
        st_depth[top] = depth + 1
        top += 1

    return (feature[:n_nodes], bin_thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], n_node[:n_nodes], gain[:n_nodes])


@nb.njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value, out):
    for i in range(X.shape[0]):
        node = 0
        while left[node] != -1:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]


@nb.njit(cache=True, nogil=True)
def _predict_packed(X, offsets, feature, threshold, left, right, value, out):
    """out[t, i] = prediction of tree t for row i; node arrays are concatenated per tree."""
    for t in range(offsets.shape[0] - 1):
        base = offsets[t]
        for i in range(X.shape[0]):
            node = 0
            while left[base + node] != -1:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, i] = value[base + node]


def build_tree(Xb, n_bins, edge_table, y, rows=None, *, max_depth=None, min_samples_leaf=1, mtry=None, seed=0) -> Tree:
    """Grow one tree on binned features ``Xb`` using row indices ``rows`` (repeats allowed)."""
    n, p = Xb.shape
    rows = np.arange(n, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("cannot grow a tree on zero rows")
    mtry = p if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError(f"mtry must lie in [1, {p}], got {mtry}")
    depth = -1 if max_depth is None else int(max_depth)
    f, b, l, r, v, nn, g = _build(Xb, np.asarray(n_bins, dtype=np.int64), np.ascontiguousarray(y, dtype=np.float64),
                                  rows, depth, float(min_samples_leaf), mtry, np.uint64(seed % (1 << 64)))
    thr = np.zeros(len(f))
    split = f >= 0
    thr[split] = edge_table[f[split], b[split]]
    return Tree(feature=f.copy(), threshold=thr, left=l.copy(), right=r.copy(), value=v.copy(),
                n_node=nn.copy(), gain=g.copy())


class PackedTrees:
    """Several trees in flat arrays for fast batch prediction."""

    def __init__(self, trees):
        sizes = [t.n_nodes for t in trees]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.feature = np.concatenate([t.feature for t in trees]).astype(np.int64)
        self.threshold = np.concatenate([t.threshold for t in trees]).astype(np.float64)
        self.left = np.concatenate([t.left for t in trees]).astype(np.int64)
        self.right = np.concatenate([t.right for t in trees]).astype(np.int64)
        self.value = np.concatenate([t.value for t in trees]).astype(np.float64)

    def predict_all(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty((len(self.offsets) - 1, X.shape[0]))
        _predict_packed(X, self.offsets, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out


def trees_to_arrays(trees, prefix=""):
    arrays = {}
    for name in Tree.FIELDS:
        arrays[f"{prefix}{name}"] = np.concatenate([getattr(t, name) for t in trees]) if trees else np.empty(0)
    arrays[f"{prefix}sizes"] = np.array([t.n_nodes for t in trees], dtype=np.int64)
    return arrays


def trees_from_arrays(arrays, prefix=""):
    sizes = arrays[f"{prefix}sizes"]
    cuts = np.concatenate([[0], np.cumsum(sizes)])
    trees = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        kw = {name: np.array(arrays[f"{prefix}{name}"][a:b]) for name in Tree.FIELDS}
        for name in ("feature", "left", "right"):
            kw[name] = kw[name].astype(np.int64)
        trees.append(Tree(**kw))
    return trees
