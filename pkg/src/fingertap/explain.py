"""Shapley attributions for boosted tree ensembles.

Absent features follow each tree's training-weighted branch proportions (node covers),
the path-dependent convention. ``tree_shap`` runs the polynomial-time path algorithm;
``brute_force_shapley`` enumerates every feature subset under the same convention and
serves as its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .features import FEATURE_NAMES
from .model import BoostedEnsemble

BRUTE_FORCE_LIMIT = 15


@dataclass
class Attribution:
    features: list
    values: np.ndarray
    base_value: float

    @property
    def prediction(self):
        """Raw (unclamped) ensemble output reconstructed from the attributions."""
        return float(self.base_value + self.values.sum())

    def as_dict(self):
        return dict(zip(self.features, (float(v) for v in self.values)))


# -- path algorithm -----------------------------------------------------------

# The recursive kernels and their callers are compiled per process: reloading
# cached recursive functions crashes numba.

@njit(cache=True)
def _extend(pd, pz, po, pw, base, depth, zero, one, feat):
    pd[base + depth] = feat
    pz[base + depth] = zero
    po[base + depth] = one
    pw[base + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[base + i + 1] += one * pw[base + i] * (i + 1) / (depth + 1)
        pw[base + i] = zero * pw[base + i] * (depth - i) / (depth + 1)


@njit(cache=True)
def _unwind(pd, pz, po, pw, base, depth, idx):
    one = po[base + idx]
    zero = pz[base + idx]
    nxt = pw[base + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[base + i]
            pw[base + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[base + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[base + i] = pw[base + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pd[base + i] = pd[base + i + 1]
        pz[base + i] = pz[base + i + 1]
        po[base + i] = po[base + i + 1]


@njit(cache=True)
def _unwound_sum(pz, po, pw, base, depth, idx):
    one = po[base + idx]
    zero = pz[base + idx]
    nxt = pw[base + depth]
    total = 0.0
    if one != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[base + i] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[base + i] / (zero * (depth - i))
    return total * (depth + 1)


@njit
def _recurse(x, feature, threshold, left, right, value, cover, phi,
             pd, pz, po, pw, parent_base, node, depth, zero, one, feat):
    # each recursion level gets its own copy of the path, stacked after the parent's
    base = parent_base + depth
    for i in range(depth):
        pd[base + i] = pd[parent_base + i]
        pz[base + i] = pz[parent_base + i]
        po[base + i] = po[parent_base + i]
        pw[base + i] = pw[parent_base + i]
    _extend(pd, pz, po, pw, base, depth, zero, one, feat)
    f = feature[node]
    if f < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(pz, po, pw, base, depth, i)
            phi[pd[base + i]] += w * (po[base + i] - pz[base + i]) * value[node]
        return
    if x[f] <= threshold[node]:
        hot, cold = left[node], right[node]
    else:
        hot, cold = right[node], left[node]
    in_zero = 1.0
    in_one = 1.0
    k = -1
    for i in range(depth + 1):
        if pd[base + i] == f:
            k = i
            break
    d = depth
    if k >= 0:
        in_zero = pz[base + k]
        in_one = po[base + k]
        _unwind(pd, pz, po, pw, base, d, k)
        d -= 1
    _recurse(x, feature, threshold, left, right, value, cover, phi, pd, pz, po, pw,
             base, hot, d + 1, cover[hot] / cover[node] * in_zero, in_one, f)
    _recurse(x, feature, threshold, left, right, value, cover, phi, pd, pz, po, pw,
             base, cold, d + 1, cover[cold] / cover[node] * in_zero, 0.0, f)


@njit
def _tree_shap_rows(Z, feature, threshold, left, right, value, cover, sizes, max_depth):
    n, m = Z.shape
    out = np.zeros((n, m))
    span = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    pd = np.zeros(span, np.int64)
    pz = np.zeros(span)
    po = np.zeros(span)
    pw = np.zeros(span)
    phi = np.zeros(m + 1)
    for r in range(n):
        for t in range(feature.shape[0]):
            if sizes[t] == 1:
                continue
            for j in range(m + 1):
                phi[j] = 0.0
            _recurse(Z[r], feature[t], threshold[t], left[t], right[t], value[t], cover[t],
                     phi, pd, pz, po, pw, 0, 0, 0, 1.0, 1.0, m)
            for j in range(m):
                out[r, j] += phi[j]
    return out


def _stacked(ensemble: BoostedEnsemble):
    size = max((t.n_nodes for t in ensemble.trees), default=1)
    T = len(ensemble.trees)
    cover = np.ones((T, size))
    sizes = np.ones(T, np.int64)
    depth = 1
    for i, t in enumerate(ensemble.trees):
        cover[i, :t.n_nodes] = t.cover
        sizes[i] = t.n_nodes
        depth = max(depth, t.depth())
    return cover, sizes, depth


def expected_value(ensemble: BoostedEnsemble) -> float:
    """Base value: the ensemble output when every feature is absent."""
    return float(ensemble.base_score + ensemble.learning_rate * sum(t.expected_value() for t in ensemble.trees))


def tree_shap_matrix(ensemble: BoostedEnsemble, X, names=None):
    """Attributions for every row of ``X``; returns (values (n, m), base_value)."""
    Z = np.ascontiguousarray(ensemble.transform(np.atleast_2d(X), names), dtype=np.float64)
    base = expected_value(ensemble)
    if not ensemble.trees:
        return np.zeros(Z.shape), base
    cover, sizes, depth = _stacked(ensemble)
    raw = _tree_shap_rows(Z, ensemble._feature, ensemble._threshold, ensemble._left, ensemble._right,
                          ensemble._value, cover, sizes, depth)
    return raw * ensemble.learning_rate, base


def tree_shap(ensemble: BoostedEnsemble, row, names=None) -> Attribution:
    values, base = tree_shap_matrix(ensemble, np.asarray(row, dtype=float).reshape(1, -1), names)
    return Attribution(list(ensemble.selected_features), values[0], base)


# -- subset enumeration oracle ------------------------------------------------

@njit
def _cond_expectation(x, known, feature, threshold, left, right, value, cover, node):
    f = feature[node]
    if f < 0:
        return value[node]
    if known[f]:
        nxt = left[node] if x[f] <= threshold[node] else right[node]
        return _cond_expectation(x, known, feature, threshold, left, right, value, cover, nxt)
    lo = _cond_expectation(x, known, feature, threshold, left, right, value, cover, left[node])
    hi = _cond_expectation(x, known, feature, threshold, left, right, value, cover, right[node])
    return (cover[left[node]] * lo + cover[right[node]] * hi) / cover[node]


@njit
def _subset_values(x, feature, threshold, left, right, value, cover, m):
    n_sub = 1 << m
    v = np.zeros(n_sub)
    known = np.zeros(m, np.bool_)
    for s in range(n_sub):
        for j in range(m):
            known[j] = (s >> j) & 1 == 1
        total = 0.0
        for t in range(feature.shape[0]):
            total += _cond_expectation(x, known, feature[t], threshold[t], left[t], right[t],
                                       value[t], cover[t], 0)
        v[s] = total
    return v


def brute_force_shapley(ensemble: BoostedEnsemble, row, names=None,
                        max_features: int = BRUTE_FORCE_LIMIT) -> Attribution:
    """Exact Shapley values by enumerating all 2^m coalitions of the selected features."""
    m = len(ensemble.selected_features)
    if m > max_features:
        raise ValueError(f"brute-force Shapley over {m} features exceeds the limit of {max_features}")
    z = np.ascontiguousarray(ensemble.transform(np.asarray(row, dtype=float).reshape(1, -1), names)[0])
    if ensemble.trees:
        cover, _, _ = _stacked(ensemble)
        v = _subset_values(z, ensemble._feature, ensemble._threshold, ensemble._left, ensemble._right,
                           ensemble._value, cover, m)
    else:
        v = np.zeros(1 << m)
    v = ensemble.base_score + ensemble.learning_rate * v
    weight = [math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m) for k in range(m)]
    size = np.array([bin(s).count("1") for s in range(1 << m)])
    phi = np.zeros(m)
    for j in range(m):
        bit = 1 << j
        without = np.array([s for s in range(1 << m) if not s & bit], dtype=np.int64)
        w = np.array([weight[k] for k in size[without]])
        phi[j] = float(np.sum(w * (v[without | bit] - v[without])))
    return Attribution(list(ensemble.selected_features), phi, float(v[0]))


# -- dataset level ------------------------------------------------------------

def _canonical_key(name):
    return (FEATURE_NAMES.index(name), "") if name in FEATURE_NAMES else (len(FEATURE_NAMES), name)


def global_importance(values, features):
    """Mean |attribution| per feature, descending, ties broken by catalog order.

    ``values`` is an (n, m) matrix or a list of Attribution objects.
    """
    if isinstance(values, (list, tuple)) and values and isinstance(values[0], Attribution):
        values = np.vstack([a.values for a in values])
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 0:
        raise ValueError("global importance needs at least one attribution")
    score = np.abs(values).mean(axis=0)
    ranked = sorted(zip(features, score), key=lambda p: (-p[1], _canonical_key(p[0])))
    return [(name, float(s)) for name, s in ranked]
