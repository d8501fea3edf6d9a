"""Gradient-boosted regression trees on the logistic loss (second-order, histogram splits)."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..data import Dataset
from .base import (FitOptions, LearnerError, Scorecard, binary_target, logit,
                   normalized_weights, register)


def weighted_log_loss(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    return float(np.sum(w * (np.logaddexp(0.0, F) - y * F)) / np.sum(w))


MAX_BINS = 256


def _bin_features(X: np.ndarray, max_bins: int = MAX_BINS):
    """Per-feature cut points and bin codes; ``x <= cuts[b]`` iff ``code <= b``.

    With at most ``max_bins`` distinct values the cuts are the midpoints
    between them, so split search is exact; otherwise cuts are quantiles.
    """
    n, k = X.shape
    codes = np.empty((n, k), dtype=np.int64)
    cuts = []
    for f in range(k):
        u = np.unique(X[:, f])
        if len(u) <= max_bins:
            c = u[:-1] + (u[1:] - u[:-1]) / 2.0
            c = np.where(c >= u[1:], u[:-1], c)
        else:
            q = np.quantile(X[:, f], np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
            q = np.unique(q)
            # midpoint to the next distinct value so the rule does not depend on float ties
            nxt = u[np.minimum(np.searchsorted(u, q, side="right"), len(u) - 1)]
            c = np.unique(np.where(nxt > q, q + (nxt - q) / 2.0, q))
        codes[:, f] = np.searchsorted(c, X[:, f], side="left")
        cuts.append(c)
    return codes, cuts


def _grow_tree(codes, cuts, g, h, sample, p):
    """Level-wise tree growth on binned features.

    Split search uses the subsampled rows; every row is routed so that leaf
    values can be fitted on the full data. Returns the flat tree arrays and
    the leaf of each row.
    """
    n, k = codes.shape
    nbin = max(len(c) for c in cuts) + 1
    if nbin < 2:
        return (np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.zeros(n, dtype=np.int64))
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    row_node = np.zeros(n, dtype=np.int64)
    frontier = [0]
    lam, mcw = p.reg_lambda, p.min_child_weight
    for _depth in range(p.max_depth):
        if not frontier:
            break
        m = len(frontier)
        local = np.full(len(feature), -1, dtype=np.int64)
        local[frontier] = np.arange(m)
        loc = local[row_node]
        rows = np.flatnonzero(sample & (loc >= 0))
        if len(rows) < 2:
            break
        lr = loc[rows]
        # histograms of every (feature, node, bin) in one pass
        key = (np.arange(k) * (m * nbin))[None, :] + (lr * nbin)[:, None] + codes[rows]
        key = key.ravel()
        size = k * m * nbin
        G = np.bincount(key, weights=np.repeat(g[rows], k), minlength=size).reshape(k, m, nbin)
        H = np.bincount(key, weights=np.repeat(h[rows], k), minlength=size).reshape(k, m, nbin)
        C = np.bincount(key, minlength=size).reshape(k, m, nbin)
        GL, HL, CL = (np.cumsum(a, axis=2)[:, :, :-1] for a in (G, H, C))
        Gt, Ht, Ct = G.sum(2, keepdims=True), H.sum(2, keepdims=True), C.sum(2, keepdims=True)
        GR, HR = Gt - GL, Ht - HL
        ok = (CL > 0) & (CL < Ct) & (HL >= mcw) & (HR >= mcw)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - Gt * Gt / (Ht + lam)
        gain = np.where(ok, gain, -np.inf)
        # first maximum in (feature, bin) order, matching a sequential scan
        flat = gain.transpose(1, 0, 2).reshape(m, -1)
        arg = np.argmax(flat, axis=1)
        best_gain = flat[np.arange(m), arg]
        best_f = np.where(best_gain > 1e-12, arg // (nbin - 1), -1)
        best_b = arg % (nbin - 1)
        nxt = []
        split_l = np.full(len(feature), -1, dtype=np.int64)
        split_r = np.full(len(feature), -1, dtype=np.int64)
        for i, node in enumerate(frontier):
            if best_f[i] < 0:
                continue
            f = int(best_f[i])
            feature[node] = f
            threshold[node] = float(cuts[f][best_b[i]])
            for side in (left, right):
                side[node] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                nxt.append(side[node])
            split_l[node], split_r[node] = left[node], right[node]
        if not nxt:
            break
        moving = np.flatnonzero(split_l[row_node] >= 0)
        nd = row_node[moving]
        fs = np.asarray(feature)[nd]
        go_left = codes[moving, fs] <= best_b[local[nd]]
        row_node[moving] = np.where(go_left, split_l[nd], split_r[nd])
        frontier = nxt
    return (np.asarray(feature), np.asarray(threshold), np.asarray(left), np.asarray(right), row_node)


def _traverse(X: np.ndarray, feature, threshold, left, right, roots, depth) -> np.ndarray:
    """Leaf node index for every (tree, row) pair."""
    n = len(X)
    node = np.repeat(roots[:, None], n, axis=1)
    cols = np.arange(n)[None, :]
    for _ in range(depth):
        f = feature[node]
        internal = f >= 0
        if not internal.any():
            break
        xv = X[cols, np.where(internal, f, 0)]
        nxt = np.where(xv <= threshold[node], left[node], right[node])
        node = np.where(internal, nxt, node)
    return node


def fit_gbt(d: Dataset, opts: FitOptions | None = None) -> Scorecard:
    """Boosted trees with Newton leaf weights on the weighted logistic loss.

    Tree structure is searched on a row subsample; leaf values are Newton
    steps over all rows of the leaf, shrunk by the learning rate. If a tree
    would raise the training loss its contribution is halved until it no
    longer does, so the staged loss is non-increasing.
    """
    opts = opts or FitOptions()
    p = opts.gbt
    X = d.features
    y = binary_target(d)
    w = normalized_weights(opts, d.n)
    n, k = X.shape
    base = float(logit(np.sum(w * y) / np.sum(w)))
    F = np.full(n, base)
    staged = [weighted_log_loss(F, y, w)]
    rng = opts.seed.generator()
    codes, cuts = _bin_features(X)
    n_sub = max(2, int(round(p.subsample * n)))

    feats, thrs, lefts, rights, vals, roots = [], [], [], [], [], []
    offset = 0
    for _ in range(p.n_trees):
        prob = expit(F)
        g = w * (prob - y)
        h = w * prob * (1 - prob)
        if n_sub < n:
            mask = np.zeros(n, dtype=bool)
            mask[rng.choice(n, size=n_sub, replace=False)] = True
        else:
            mask = np.ones(n, dtype=bool)
        fa, ta, la, ra, leaf = _grow_tree(codes, cuts, g, h, mask, p)
        Gs = np.bincount(leaf, weights=g, minlength=len(fa))
        Hs = np.bincount(leaf, weights=h, minlength=len(fa))
        value = np.where(fa < 0, -p.learning_rate * Gs / (Hs + p.reg_lambda), 0.0)
        delta = value[leaf]
        scale = 1.0
        loss = weighted_log_loss(F + delta, y, w)
        while loss > staged[-1] and scale > 2 ** -30:
            scale *= 0.5
            loss = weighted_log_loss(F + scale * delta, y, w)
        if loss > staged[-1]:
            scale, loss = 0.0, staged[-1]
        value *= scale
        F = F + scale * delta
        staged.append(loss)

        feats.append(fa)
        thrs.append(ta)
        lefts.append(np.where(fa >= 0, la + offset, -1))
        rights.append(np.where(fa >= 0, ra + offset, -1))
        vals.append(value)
        roots.append(offset)
        offset += len(fa)

    def cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    params = {
        "base_score": base,
        "feature": cat(feats, np.int64),
        "threshold": cat(thrs, float),
        "left": cat(lefts, np.int64),
        "right": cat(rights, np.int64),
        "value": cat(vals, float),
        "roots": np.array(roots, dtype=np.int64),
        "max_depth": p.max_depth,
    }
    meta = {"n": n, "n_trees": p.n_trees, "staged_loss": np.array(staged),
            "weighted": opts.sample_weights is not None, "seed": opts.seed.seed}
    return Scorecard("gbt", params, k, meta)


def gbt_margin(m: Scorecard, X: np.ndarray) -> np.ndarray:
    p = m.params
    F = np.full(len(X), p["base_score"])
    roots = p["roots"]
    if len(roots) == 0:
        return F
    leaves = _traverse(X, p["feature"], p["threshold"], p["left"], p["right"], roots, int(p["max_depth"]))
    # accumulate tree by tree to match the order used during training
    vals = p["value"][leaves]
    for t in range(len(roots)):
        F = F + vals[t]
    return F


@register("gbt")
def _predict_gbt(m, X):
    return expit(gbt_margin(m, X))


def staged_loss(m: Scorecard) -> np.ndarray:
    if m.kind != "gbt":
        raise LearnerError("staged loss is only recorded for gbt scorecards")
    return np.asarray(m.training_meta["staged_loss"])
