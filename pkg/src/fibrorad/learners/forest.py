"""Random forest of Gini CART trees with bootstrap sampling.

Trees are stored as flat node arrays, one block of ``2 n`` slots per tree.
Bootstrap draws are made in Python from the model generator so that tests can
reproduce each tree's sample; split-feature sampling runs inside numba from a
per-tree seed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .base import TrainedModel, check_two_classes


@njit(cache=True)
def _build_tree(X, y, w, max_features, max_depth, off, feat, thr, left, right, value, importance):
    n, p = X.shape
    idx = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if w[i] > 0:
            idx[m] = i
            m += 1
    stack_s = np.empty(2 * n + 2, dtype=np.int64)
    stack_e = np.empty(2 * n + 2, dtype=np.int64)
    stack_d = np.empty(2 * n + 2, dtype=np.int64)
    stack_id = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    stack_s[0] = 0
    stack_e[0] = m
    stack_d[0] = 0
    stack_id[0] = 0
    top = 1
    n_nodes = 1
    vals = np.empty(n)
    tmp = np.empty(n, dtype=np.int64)
    while top > 0:
        top -= 1
        s = stack_s[top]
        e = stack_e[top]
        depth = stack_d[top]
        nid = stack_id[top]
        w0 = 0.0
        w1 = 0.0
        for q in range(s, e):
            i = idx[q]
            if y[i] == 1:
                w1 += w[i]
            else:
                w0 += w[i]
        W = w0 + w1
        value[off + nid] = w1 / W
        if (max_depth >= 0 and depth >= max_depth) or W < 2.0 or w0 == 0.0 or w1 == 0.0:
            continue
        parent = (w0 * w0 + w1 * w1) / W
        best = -1.0
        best_f = -1
        best_t = 0.0
        perm = np.random.permutation(p)
        visited = 0
        cnt = e - s
        for fi in range(p):
            if visited >= max_features:
                break
            f = perm[fi]
            for q in range(cnt):
                vals[q] = X[idx[s + q], f]
            order = np.argsort(vals[:cnt], kind="mergesort")
            if vals[order[0]] == vals[order[cnt - 1]]:
                continue
            visited += 1
            l0 = 0.0
            l1 = 0.0
            for q in range(cnt - 1):
                i = idx[s + order[q]]
                if y[i] == 1:
                    l1 += w[i]
                else:
                    l0 += w[i]
                a = vals[order[q]]
                b = vals[order[q + 1]]
                if a < b:
                    WL = l0 + l1
                    WR = W - WL
                    r0 = w0 - l0
                    r1 = w1 - l1
                    proxy = (l0 * l0 + l1 * l1) / WL + (r0 * r0 + r1 * r1) / WR
                    if proxy > best:
                        best = proxy
                        best_f = f
                        t = 0.5 * (a + b)
                        if t >= b:
                            t = a
                        best_t = t
        if best_f < 0:
            continue
        # stable partition of idx[s:e]
        nl = 0
        for q in range(s, e):
            if X[idx[q], best_f] <= best_t:
                tmp[nl] = idx[q]
                nl += 1
        k = nl
        for q in range(s, e):
            if X[idx[q], best_f] > best_t:
                tmp[k] = idx[q]
                k += 1
        for q in range(cnt):
            idx[s + q] = tmp[q]
        importance[best_f] += best - parent
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feat[off + nid] = best_f
        thr[off + nid] = best_t
        left[off + nid] = lid
        right[off + nid] = rid
        stack_s[top] = s + nl
        stack_e[top] = e
        stack_d[top] = depth + 1
        stack_id[top] = rid
        top += 1
        stack_s[top] = s
        stack_e[top] = s + nl
        stack_d[top] = depth + 1
        stack_id[top] = lid
        top += 1
    return n_nodes


@njit(cache=True)
def _fit_forest(X, y, counts, seeds, max_features, max_depth):
    n, p = X.shape
    T = counts.shape[0]
    slots = 2 * n
    feat = np.full(T * slots, -1, dtype=np.int64)
    thr = np.zeros(T * slots)
    left = np.full(T * slots, -1, dtype=np.int64)
    right = np.full(T * slots, -1, dtype=np.int64)
    value = np.zeros(T * slots)
    n_nodes = np.zeros(T, dtype=np.int64)
    importance = np.zeros(p)
    for t in range(T):
        np.random.seed(seeds[t])
        n_nodes[t] = _build_tree(X, y, counts[t], max_features, max_depth, t * slots,
                                 feat, thr, left, right, value, importance)
    return feat, thr, left, right, value, n_nodes, importance


@njit(cache=True)
def _predict_forest(X, feat, thr, left, right, value, n_trees, slots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            off = t * slots
            node = 0
            while feat[off + node] >= 0:
                if X[i, feat[off + node]] <= thr[off + node]:
                    node = left[off + node]
                else:
                    node = right[off + node]
            acc += value[off + node]
        out[i] = acc / n_trees
    return out


def resolve_max_features(rule, p: int) -> int:
    # "auto" means sqrt(p) for classifiers
    if rule in ("auto", "sqrt"):
        return max(1, int(math.ceil(math.sqrt(p))))
    if rule is None:
        return p
    return max(1, min(p, int(rule)))


def forest_draws(rng: np.random.Generator, n: int, n_trees: int):
    """Bootstrap multiplicities (n_trees x n) and per-tree split seeds."""
    counts = np.empty((n_trees, n), dtype=np.float64)
    for t in range(n_trees):
        counts[t] = np.bincount(rng.integers(0, n, size=n), minlength=n)
    seeds = rng.integers(0, 2**31 - 1, size=n_trees)
    return counts, seeds


def fit_forest(X, y, n_estimators=100, max_features="sqrt", max_depth=None, rng=None):
    if rng is None:
        raise ValueError("random forests need an explicit seeded generator")
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = check_two_classes(y)
    n, p = X.shape
    counts, seeds = forest_draws(rng, n, int(n_estimators))
    depth = -1 if max_depth is None else int(max_depth)
    feat, thr, left, right, value, n_nodes, imp = _fit_forest(
        X, y, counts, seeds, resolve_max_features(max_features, p), depth)
    total = imp.sum()
    importance = imp / total if total > 0 else np.zeros(p)
    params = {"feature": feat, "threshold": thr, "left": left, "right": right,
              "value": value, "n_nodes": n_nodes, "slots": np.array([2 * n])}
    return params, importance


def train_rf(X, y, n_estimators=100, max_features="sqrt", max_depth=None, rng=None,
             seed=None, features=None) -> TrainedModel:
    if rng is None:
        rng = np.random.default_rng(seed)
    params, importance = fit_forest(X, y, n_estimators, max_features, max_depth, rng)
    X = np.asarray(X)
    features = tuple(features) if features is not None else tuple(f"x{i}" for i in range(X.shape[1]))
    hyper = {"n_estimators": int(n_estimators), "max_features": max_features, "max_depth": max_depth}
    return TrainedModel("rf", hyper, features, params, importance, seed)


def score_rf(m: TrainedModel, X):
    p = m.params
    return _predict_forest(np.ascontiguousarray(X), p["feature"], p["threshold"], p["left"], p["right"],
                           p["value"], int(p["n_nodes"].size), int(p["slots"][0]))
