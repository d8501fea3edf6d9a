"""Isolation forest novelty scores."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..data import Dataset, RngSeed, as_seed
from .base import LearnerError, features_of

_EULER = 0.5772156649015329


def average_path_length(n) -> np.ndarray:
    """Expected path length of an unsuccessful BST search over ``n`` points."""
    n = np.asarray(n, dtype=float)
    out = np.zeros_like(n)
    big = n > 2
    out[n == 2] = 1.0
    nb = n[big]
    out[big] = 2.0 * (np.log(nb - 1.0) + _EULER) - 2.0 * (nb - 1.0) / nb
    return out


@dataclass(frozen=True, eq=False)
class NoveltyModel:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray
    roots: np.ndarray
    subsample_size: int
    n_trees: int
    feature_arity: int

    @property
    def max_depth(self) -> int:
        return int(math.ceil(math.log2(self.subsample_size))) if self.subsample_size > 1 else 0

    def path_lengths(self, d: "Dataset | np.ndarray") -> np.ndarray:
        X = features_of(d)
        if X.shape[1] != self.feature_arity:
            raise LearnerError("feature arity mismatch")
        n = len(X)
        node = np.repeat(self.roots[:, None], n, axis=1)
        cols = np.arange(n)[None, :]
        for _ in range(self.max_depth + 1):
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                break
            xv = X[cols, np.where(internal, f, 0)]
            nxt = np.where(xv < self.threshold[node], self.left[node], self.right[node])
            node = np.where(internal, nxt, node)
        h = self.depth[node] + average_path_length(self.size[node])
        return h.mean(axis=0)

    def score(self, d: "Dataset | np.ndarray") -> np.ndarray:
        """Anomaly score in (0, 1); larger means less like the training data."""
        return 2.0 ** (-self.path_lengths(d) / average_path_length(self.subsample_size))


def fit_isolation_forest(d: "Dataset | np.ndarray", n_trees: int = 100, subsample: int = 256,
                         seed: "RngSeed | int" = 0) -> NoveltyModel:
    X = features_of(d)
    n, k = X.shape
    subsample = min(subsample, n)
    if subsample < 2:
        raise LearnerError("isolation forest needs at least two rows")
    if n_trees < 1:
        raise LearnerError("n_trees must be >= 1")
    if np.all(X.max(axis=0) == X.min(axis=0)):
        raise LearnerError("constant feature matrix: no split is possible")
    rng = as_seed(seed).generator()
    limit = int(math.ceil(math.log2(subsample)))

    feature, threshold, left, right, size, depth, roots = [], [], [], [], [], [], []

    def grow(rows, dep):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        depth.append(dep)
        if dep >= limit or len(rows) <= 1:
            return node
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        cand = np.flatnonzero(hi > lo)
        if len(cand) == 0:
            return node
        f = int(cand[rng.integers(len(cand))])
        thr = float(rng.uniform(lo[f], hi[f]))
        go_left = sub[:, f] < thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(rows[go_left], dep + 1)
        right[node] = grow(rows[~go_left], dep + 1)
        return node

    for _ in range(n_trees):
        rows = rng.choice(n, size=subsample, replace=False)
        roots.append(grow(rows, 0))

    return NoveltyModel(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                        np.array(size), np.array(depth, dtype=float), np.array(roots),
                        subsample, n_trees, k)
