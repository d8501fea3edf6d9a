"""Scorecard performance measures.

Scores are predicted probabilities of default: higher means riskier. Labels
are 1 = bad, 0 = good. Every measure optionally takes per-row weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import rankdata

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

METRIC_NAMES = ("auc", "brier", "pauc", "abr")
ORIENTATION = {"auc": HIGHER_BETTER, "pauc": HIGHER_BETTER, "brier": LOWER_BETTER, "abr": LOWER_BETTER}


class MetricUndefined(ValueError):
    """The metric cannot be computed on this sample (e.g. a single class)."""


@dataclass(frozen=True)
class MetricSpec:
    """A named measure with its meta-parameters.

    ``window`` is the FNR range for ``pauc`` and the acceptance range for
    ``abr``; ``step`` is the ABR integration grid step.
    """

    name: str
    window: tuple[float, float] | None = None
    step: float = 0.01

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r}")
        if self.window is None:
            default = {"pauc": (0.0, 0.2), "abr": (0.2, 0.4)}.get(self.name)
            object.__setattr__(self, "window", default)
        if self.window is not None:
            lo, hi = map(float, self.window)
            object.__setattr__(self, "window", (lo, hi))
            if not (0.0 <= lo <= hi <= 1.0) or (self.name == "pauc" and lo >= hi):
                raise ValueError(f"invalid window {self.window} for {self.name}")
        if self.step <= 0:
            raise ValueError("step must be positive")

    @property
    def orientation(self) -> str:
        return ORIENTATION[self.name]

    @property
    def label(self) -> str:
        return self.name

    def compute(self, scores, labels, weights=None) -> "MetricValue":
        if self.name == "auc":
            return auc(scores, labels, weights)
        if self.name == "brier":
            return brier(scores, labels, weights)
        if self.name == "pauc":
            return pauc(scores, labels, self.window, weights)
        return abr(scores, labels, self.window, self.step, weights)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.window is not None:
            d["window"] = list(self.window)
        if self.name == "abr":
            d["step"] = self.step
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricSpec":
        if isinstance(d, str):
            return cls(d)
        w = d.get("window")
        return cls(d["name"], tuple(w) if w is not None else None, float(d.get("step", 0.01)))


@dataclass(frozen=True)
class MetricValue:
    value: float
    n_eval: int
    orientation: str

    def __float__(self):
        return float(self.value)

    def better_than(self, other: "MetricValue | float") -> bool:
        o = float(other)
        return self.value > o if self.orientation == HIGHER_BETTER else self.value < o


def _prep(scores, labels, weights=None):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    y = y.astype(np.int8)
    if weights is not None:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape != s.shape:
            raise ValueError("weights misaligned with scores")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and >= 0")
        return s, y, w
    return s, y, None


def _both_classes(y, w, what):
    if w is None:
        pos = int(y.sum())
        if pos == 0 or pos == len(y):
            raise MetricUndefined(f"{what} undefined: labels contain a single class")
    else:
        if w[y == 1].sum() <= 0 or w[y == 0].sum() <= 0:
            raise MetricUndefined(f"{what} undefined: one class has zero weight")


def auc(scores, labels, weights=None) -> MetricValue:
    """P(score of a random bad > score of a random good), ties counted half."""
    s, y, w = _prep(scores, labels, weights)
    _both_classes(y, w, "AUC")
    if w is None:
        n1 = int(y.sum())
        n0 = len(y) - n1
        r = rankdata(s)
        u = r[y == 1].sum() - n1 * (n1 + 1) / 2.0
        return MetricValue(float(u / (n1 * n0)), len(y), HIGHER_BETTER)
    fpr, tpr = _roc(s, y, w)
    val = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return MetricValue(val, len(y), HIGHER_BETTER)


def _roc(s, y, w=None):
    """ROC vertices (FPR, TPR) sweeping the cutoff from high to low scores.

    Tied scores form one vertex, so ties give diagonal segments.
    """
    if w is None:
        w = np.ones(len(s))
    order = np.argsort(-s, kind="stable")
    s_o = s[order]
    pos = np.where(y[order] == 1, w[order], 0.0)
    neg = np.where(y[order] == 0, w[order], 0.0)
    last = np.r_[np.flatnonzero(s_o[1:] != s_o[:-1]), len(s_o) - 1]
    tp = np.r_[0.0, np.cumsum(pos)[last]]
    fp = np.r_[0.0, np.cumsum(neg)[last]]
    return fp / fp[-1], tp / tp[-1]


def _partial_area_tpr(fpr, tpr, lo, hi):
    """Integral of (1 - FPR) over TPR in [lo, hi] along the piecewise-linear ROC."""
    f0, t0, f1, t1 = fpr[:-1], tpr[:-1], fpr[1:], tpr[1:]
    keep = (t1 > t0) & (t1 > lo) & (t0 < hi)
    f0, t0, f1, t1 = f0[keep], t0[keep], f1[keep], t1[keep]
    a = np.maximum(t0, lo)
    b = np.minimum(t1, hi)
    slope = (f1 - f0) / (t1 - t0)
    fa = f0 + slope * (a - t0)
    fb = f0 + slope * (b - t0)
    return float(np.sum((b - a) * (1.0 - 0.5 * (fa + fb))))


def pauc(scores, labels, window=(0.0, 0.2), weights=None) -> MetricValue:
    """Partial AUC over a false-negative-rate window, normalised by the window width.

    A false negative is a bad applicant scored below the cutoff (accepted).
    The FNR window [lo, hi] maps to TPR in [1 - hi, 1 - lo]; the area of
    1 - FPR over that TPR band is divided by ``hi - lo`` so a perfect
    ranking scores 1 and the full window reproduces the AUC.
    """
    s, y, w = _prep(scores, labels, weights)
    _both_classes(y, w, "PAUC")
    lo, hi = map(float, window)
    if not 0.0 <= lo < hi <= 1.0:
        raise ValueError("pauc window must satisfy 0 <= lo < hi <= 1")
    fpr, tpr = _roc(s, y, w)
    area = _partial_area_tpr(fpr, tpr, 1.0 - hi, 1.0 - lo)
    return MetricValue(float(area / (hi - lo)), len(y), HIGHER_BETTER)


def brier(scores, labels, weights=None) -> MetricValue:
    s, y, w = _prep(scores, labels, weights)
    if np.any((s < 0) | (s > 1)):
        raise ValueError("brier score needs scores in [0, 1]")
    if len(s) == 0:
        raise MetricUndefined("brier score of an empty sample")
    err = (s - y) ** 2
    val = err.mean() if w is None else np.sum(w * err) / np.sum(w)
    return MetricValue(float(val), len(y), LOWER_BETTER)


def acceptance_grid(window, step) -> np.ndarray:
    lo, hi = map(float, window)
    m = int(np.floor((hi - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(m + 1), 12)


def accepted_count(alpha: float, n: int) -> int:
    return int(np.floor(alpha * n + 1e-9))


def abr(scores, labels, window=(0.2, 0.4), step=0.01, weights=None) -> MetricValue:
    """Bad rate among accepts, averaged over acceptance rates in ``window``.

    At rate a the floor(a * n) lowest-score rows are accepted; ties keep input
    order. With weights, rows are accepted while their cumulative weight stays
    within a * total weight.
    """
    s, y, w = _prep(scores, labels, weights)
    alphas = acceptance_grid(window, step)
    order = np.argsort(s, kind="stable")
    if w is None:
        cum_bad = np.r_[0, np.cumsum(y[order])]
        counts = np.array([accepted_count(a, len(s)) for a in alphas])
        if counts.min() < 1:
            raise MetricUndefined("ABR window accepts no rows")
        rates = cum_bad[counts] / counts
    else:
        wo = w[order]
        cw = np.cumsum(wo)
        cb = np.cumsum(wo * y[order])
        total = cw[-1]
        counts = np.searchsorted(cw, alphas * total * (1 + 1e-12), side="right")
        if counts.min() < 1:
            raise MetricUndefined("ABR window accepts no rows")
        rates = cb[counts - 1] / cw[counts - 1]
    return MetricValue(float(rates.mean()), len(s), LOWER_BETTER)


def rmse_of_estimates(estimates, truth) -> float:
    e = np.asarray(estimates, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if e.shape != t.shape:
        raise ValueError("estimates and truth differ in length")
    if len(e) == 0:
        raise ValueError("need at least one estimate")
    return float(np.sqrt(np.mean((e - t) ** 2)))


def median_bandwidth(A: np.ndarray, B: np.ndarray) -> float:
    d = pdist(np.vstack([A, B]))
    bw = float(np.median(d))
    return bw if bw > 0 else 1.0


def mmd(a, b, bandwidth: float | str = "median", *, max_rows: int = 2000, seed=0) -> float:
    """Unbiased squared MMD with a Gaussian kernel exp(-|x-y|^2 / (2 bw^2)).

    The cross term runs over all pairs, so the estimate is invariant to row
    order. Samples larger than ``max_rows`` are subsampled (seeded).
    """
    A = np.asarray(getattr(a, "features", a), dtype=float)
    B = np.asarray(getattr(b, "features", b), dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if B.ndim == 1:
        B = B[:, None]
    if A.shape[1] != B.shape[1]:
        raise ValueError("feature arity mismatch")
    if len(A) < 2 or len(B) < 2:
        raise ValueError("mmd needs at least two rows per sample")
    if len(A) > max_rows or len(B) > max_rows:
        from .data import as_seed
        rng = as_seed(seed).generator()
        if len(A) > max_rows:
            A = A[np.sort(rng.choice(len(A), max_rows, replace=False))]
        if len(B) > max_rows:
            B = B[np.sort(rng.choice(len(B), max_rows, replace=False))]
    bw = median_bandwidth(A, B) if bandwidth == "median" else float(bandwidth)
    gamma = 1.0 / (2.0 * bw * bw)
    m, n = len(A), len(B)
    kaa = np.exp(-gamma * pdist(A, "sqeuclidean")).sum() * 2.0
    kbb = np.exp(-gamma * pdist(B, "sqeuclidean")).sum() * 2.0
    kab = np.exp(-gamma * cdist(A, B, "sqeuclidean")).sum()
    return float(kaa / (m * (m - 1)) + kbb / (n * (n - 1)) - 2.0 * kab / (m * n))


# ---------------------------------------------------------------------------
# fixed-score evaluation for Monte-Carlo loops


class FixedScoreEvaluator:
    """Evaluates one metric many times for fixed scores and varying labels."""

    def __init__(self, spec: MetricSpec, scores):
        self.spec = spec
        self.s = np.asarray(scores, dtype=float)
        self.n = len(self.s)
        if spec.name == "auc":
            self.ranks = rankdata(self.s)
        elif spec.name == "abr":
            self.order = np.argsort(self.s, kind="stable")
            self.counts = np.array([accepted_count(a, self.n) for a in acceptance_grid(spec.window, spec.step)])
            if self.counts.min() < 1:
                raise MetricUndefined("ABR window accepts no rows")
        elif spec.name == "pauc":
            self.order = np.argsort(-self.s, kind="stable")
            s_o = self.s[self.order]
            self.last = np.r_[np.flatnonzero(s_o[1:] != s_o[:-1]), self.n - 1]
        elif spec.name == "brier":
            if np.any((self.s < 0) | (self.s > 1)):
                raise ValueError("brier score needs scores in [0, 1]")

    def __call__(self, y: np.ndarray) -> float:
        name = self.spec.name
        if name == "brier":
            return float(np.mean((self.s - y) ** 2))
        if name == "abr":
            cum_bad = np.r_[0, np.cumsum(y[self.order])]
            return float((cum_bad[self.counts] / self.counts).mean())
        n1 = int(y.sum())
        if n1 == 0 or n1 == self.n:
            raise MetricUndefined(f"{name} undefined: labels contain a single class")
        if name == "auc":
            n0 = self.n - n1
            return float((self.ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))
        yo = y[self.order]
        tp = np.r_[0.0, np.cumsum(yo)[self.last]]
        fp = np.r_[0.0, np.cumsum(1 - yo)[self.last]]
        lo, hi = self.spec.window
        area = _partial_area_tpr(fp / fp[-1], tp / tp[-1], 1.0 - hi, 1.0 - lo)
        return float(area / (hi - lo))
