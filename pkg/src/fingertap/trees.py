"""Regression trees grown level by level with exact, variance-reduction splits.

Trees are stored as flat node arrays. Node 0 is the root; a leaf has ``feature == -1``.
Every node records its training cover (rows reaching it) and mean residual, which the
Shapley code uses as branch weights and expectations. The boosting loop itself lives
here too so that fitting hundreds of trees stays inside compiled code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class RegressionTree:
    feature: np.ndarray    # int64, -1 at leaves
    threshold: np.ndarray  # go left when x <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # mean residual of the rows reaching the node
    cover: np.ndarray
    gain: np.ndarray       # squared-error reduction of the split, 0 at leaves

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.feature < 0

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def predict(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def expected_value(self):
        """Cover-weighted mean of the leaf values."""
        leaves = self.is_leaf
        return float((self.value[leaves] * self.cover[leaves]).sum() / self.cover[0])

    def to_dict(self):
        """Split into internal nodes and leaves; a child reference c < 0 points at leaf -c - 1."""
        internal = np.flatnonzero(~self.is_leaf)
        leaves = np.flatnonzero(self.is_leaf)
        node_pos = {int(i): k for k, i in enumerate(internal)}
        leaf_pos = {int(i): k for k, i in enumerate(leaves)}

        def ref(i):
            i = int(i)
            return node_pos[i] if i in node_pos else -leaf_pos[i] - 1

        nodes = [{"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                  "left": ref(self.left[i]), "right": ref(self.right[i]),
                  "cover": float(self.cover[i]), "gain": float(self.gain[i]),
                  "value": float(self.value[i])} for i in internal]
        leaf_list = [{"value": float(self.value[i]), "cover": float(self.cover[i])} for i in leaves]
        root = 0 if len(internal) else -1
        return {"root": root, "nodes": nodes, "leaves": leaf_list}

    @classmethod
    def from_dict(cls, d):
        nodes, leaves = d["nodes"], d["leaves"]
        # rebuild in breadth-first order from the root reference
        feature, threshold, left, right, value, cover, gain = [], [], [], [], [], [], []
        queue = [d.get("root", 0 if nodes else -1)]
        slots = []

        def add(ref):
            idx = len(feature)
            if ref >= 0:
                nd = nodes[ref]
                feature.append(nd["feature"]); threshold.append(nd["threshold"])
                value.append(nd["value"]); cover.append(nd["cover"]); gain.append(nd["gain"])
            else:
                lf = leaves[-ref - 1]
                feature.append(-1); threshold.append(0.0)
                value.append(lf["value"]); cover.append(lf["cover"]); gain.append(0.0)
            left.append(-1); right.append(-1)
            return idx

        slots.append(add(queue[0]))
        head = 0
        while head < len(queue):
            ref, idx = queue[head], slots[head]
            head += 1
            if ref >= 0:
                nd = nodes[ref]
                for side, child in (("left", nd["left"]), ("right", nd["right"])):
                    cidx = add(child)
                    (left if side == "left" else right)[idx] = cidx
                    queue.append(child)
                    slots.append(cidx)
        return cls(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                   np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                   np.array(value, dtype=float), np.array(cover, dtype=float),
                   np.array(gain, dtype=float))


# -- compiled kernels ---------------------------------------------------------

@njit(cache=True)
def _predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        k = 0
        while feature[k] >= 0:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = value[k]
    return out


@njit(cache=True)
def _grow_tree(X, order, xs, resid, in_sample, max_depth, min_leaf, rel_tol,
               feature, threshold, left, right, value, cover, gain):
    """Grow one tree into the preallocated node arrays; returns the node count.

    ``order[f]`` lists the rows sorted by feature f and ``xs[f]`` the matching values.
    For every feature the in-sample rows are kept grouped by node, each group still in
    sorted order, so a node's split search is a single pass over a contiguous slice.
    """
    n, m = X.shape
    max_nodes = feature.shape[0]
    # two buffers: each level reads one and writes the children's groups to the other
    rows2 = np.empty((2, m, n), np.int64)
    vals2 = np.empty((2, m, n))
    ns = 0
    for f in range(m):
        j2 = 0
        for j in range(n):
            i = order[f, j]
            rows2[0, f, j2] = i
            vals2[0, f, j2] = xs[f, j]
            j2 += 1 if in_sample[i] else 0
        ns = j2
    cur = 0
    seg_lo = np.zeros(max_nodes, np.int64)
    seg_hi = np.zeros(max_nodes, np.int64)
    seg_hi[0] = ns
    cnt = np.zeros(max_nodes)
    tot = np.zeros(max_nodes)
    sq = np.zeros(max_nodes)
    for i in range(n):
        if in_sample[i]:
            cnt[0] += 1.0
            tot[0] += resid[i]
            sq[0] += resid[i] * resid[i]
    for k in range(max_nodes):
        feature[k] = -1
        threshold[k] = 0.0
        left[k] = -1
        right[k] = -1
        gain[k] = 0.0
    n_nodes = 1
    cover[0] = cnt[0]
    value[0] = tot[0] / cnt[0] if cnt[0] > 0 else 0.0
    go_left = np.zeros(n, np.int64)

    level_start = 0
    level_end = 1
    for depth in range(max_depth):
        rows = rows2[cur]
        vals = vals2[cur]
        next_start = n_nodes
        for k in range(level_start, level_end):
            if cnt[k] < 2 * min_leaf:
                continue
            if not sq[k] - tot[k] * tot[k] / cnt[k] > rel_tol * sq[k]:
                continue
            # best score sl^2/nl + sr^2/nr against the parent term tot^2/cnt; a candidate
            # must beat the incumbent by tol, so near-ties keep the earlier (feature, threshold)
            parent = tot[k] * tot[k] / cnt[k]
            tol = rel_tol * sq[k]
            best = parent
            bar = parent + tol
            best_f = -1
            best_t = 0.0
            lo = seg_lo[k]
            hi = seg_hi[k]
            ck = cnt[k]
            tk = tot[k]
            # a split before position j leaves j - lo rows on the left
            first = lo + int(min_leaf)
            last = hi - int(min_leaf)
            for f in range(m):
                sl = 0.0
                for j in range(lo, first):
                    sl += resid[rows[f, j]]
                nl = float(first - lo)
                prev = vals[f, first - 1]
                for j in range(first, last + 1):
                    x = vals[f, j]
                    if x > prev:
                        nr = ck - nl
                        sr = tk - sl
                        # cleared of divisions; exact score only for contenders
                        if sl * sl * nr + sr * sr * nl > bar * nl * nr:
                            score = sl * sl / nl + sr * sr / nr
                            if score > bar:
                                best = score
                                bar = score + tol
                                best_f = f
                                mid = 0.5 * (prev + x)
                                if mid >= x:
                                    mid = prev
                                best_t = mid
                    nl += 1.0
                    sl += resid[rows[f, j]]
                    prev = x
            if best_f < 0:
                continue
            feature[k] = best_f
            threshold[k] = best_t
            gain[k] = best - parent
            left[k] = n_nodes
            right[k] = n_nodes + 1
            n_nodes += 2
        if n_nodes == next_start:
            break
        for k in range(level_start, level_end):
            if feature[k] < 0:
                continue
            lo = seg_lo[k]
            hi = seg_hi[k]
            fk = feature[k]
            tk = threshold[k]
            cl = left[k]
            cr = right[k]
            cnt[cl] = 0.0
            tot[cl] = 0.0
            sq[cl] = 0.0
            cnt[cr] = 0.0
            tot[cr] = 0.0
            sq[cr] = 0.0
            for j in range(lo, hi):
                i = rows[0, j]
                g = X[i, fk] <= tk
                go_left[i] = 1 if g else 0
                c = cl if g else cr
                cnt[c] += 1.0
                tot[c] += resid[i]
                sq[c] += resid[i] * resid[i]
            n_left = 0
            for j in range(lo, hi):
                n_left += go_left[rows[0, j]]
            seg_lo[cl] = lo
            seg_hi[cl] = lo + n_left
            seg_lo[cr] = lo + n_left
            seg_hi[cr] = hi
            cover[cl] = cnt[cl]
            value[cl] = tot[cl] / cnt[cl]
            cover[cr] = cnt[cr]
            value[cr] = tot[cr] / cnt[cr]
            if depth + 1 == max_depth:
                continue
            out_rows = rows2[1 - cur]
            out_vals = vals2[1 - cur]
            for f in range(m):
                a = lo
                b = lo + n_left
                for j in range(lo, hi):
                    i = rows[f, j]
                    g = go_left[i]
                    pos = a if g == 1 else b
                    out_rows[f, pos] = i
                    out_vals[f, pos] = vals[f, j]
                    a += g
                    b += 1 - g
        cur = 1 - cur
        level_start = next_start
        level_end = n_nodes
    return n_nodes


@njit(cache=True)
def _boost(X, order, xs, y, masks, base, lr, max_depth, min_leaf, rel_tol):
    n_rounds = masks.shape[0]
    n = X.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.empty((n_rounds, max_nodes), np.int64)
    threshold = np.empty((n_rounds, max_nodes))
    left = np.empty((n_rounds, max_nodes), np.int64)
    right = np.empty((n_rounds, max_nodes), np.int64)
    value = np.zeros((n_rounds, max_nodes))
    cover = np.zeros((n_rounds, max_nodes))
    gain = np.empty((n_rounds, max_nodes))
    sizes = np.empty(n_rounds, np.int64)
    pred = np.full(n, base)
    resid = np.empty(n)
    for t in range(n_rounds):
        for i in range(n):
            resid[i] = y[i] - pred[i]
        sizes[t] = _grow_tree(X, order, xs, resid, masks[t], max_depth, min_leaf, rel_tol,
                              feature[t], threshold[t], left[t], right[t], value[t], cover[t], gain[t])
        step = _predict_tree(X, feature[t], threshold[t], left[t], right[t], value[t])
        for i in range(n):
            pred[i] += lr * step[i]
    return feature, threshold, left, right, value, cover, gain, sizes


@njit(cache=True)
def _predict_ensemble(X, feature, threshold, left, right, value, base, lr):
    n = X.shape[0]
    out = np.full(n, base)
    for t in range(feature.shape[0]):
        for i in range(n):
            k = 0
            while feature[t, k] >= 0:
                if X[i, feature[t, k]] <= threshold[t, k]:
                    k = left[t, k]
                else:
                    k = right[t, k]
            out[i] += lr * value[t, k]
    return out


REL_TOL = 1e-12


def sort_order(X):
    """Per-feature stable argsort, shape (n_features, n_rows)."""
    X = np.asarray(X, dtype=np.float64)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def sorted_values(X, order):
    """``xs[f, j] = X[order[f, j], f]``."""
    X = np.asarray(X, dtype=np.float64)
    return np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


def fit_tree(X, residuals, max_depth=3, min_leaf=5, sample=None) -> RegressionTree:
    """Fit one regression tree to ``residuals``.

    Splits maximize the squared-error reduction; candidate thresholds are midpoints
    between consecutive distinct values inside a node, ties going to the lowest
    feature index and then the lowest threshold. Scores closer than ``REL_TOL`` times
    the node's residual sum of squares count as ties, so rounding cannot reorder
    equal splits. ``sample`` optionally restricts the rows used for fitting.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    r = np.ascontiguousarray(residuals, dtype=np.float64)
    n = X.shape[0]
    mask = np.ones(n, dtype=np.bool_) if sample is None else np.asarray(sample, dtype=np.bool_)
    max_nodes = 2 ** (max_depth + 1) - 1
    arrays = [np.empty(max_nodes, np.int64), np.empty(max_nodes), np.empty(max_nodes, np.int64),
              np.empty(max_nodes, np.int64), np.zeros(max_nodes), np.zeros(max_nodes), np.empty(max_nodes)]
    order = sort_order(X)
    size = _grow_tree(X, order, sorted_values(X, order), r, mask, max_depth, min_leaf, REL_TOL, *arrays)
    return RegressionTree(*(a[:size].copy() for a in arrays))


def tree_from_rows(feature, threshold, left, right, value, cover, gain, size):
    return RegressionTree(feature[:size].copy(), threshold[:size].copy(), left[:size].copy(),
                          right[:size].copy(), value[:size].copy(), cover[:size].copy(),
                          gain[:size].copy())
