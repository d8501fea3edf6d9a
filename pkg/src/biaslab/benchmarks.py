"""Reference bias-correction methods for training and evaluation."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

from .basl import BaslConfig, basl_fit
from .bayes import Prior, build_prior, split_validation
from .data import Dataset, RngSeed, Split, UNKNOWN, as_seed, concat
from .learners import FitOptions, Scorecard, fit_gbt, fit_l1_logistic, fit_probit, predict_proba
from .learners.base import register
from .learners.gbt import gbt_margin
from .learners.linear import inverse_mills, probit_index
from .metrics import MetricSpec, MetricValue

log = logging.getLogger(__name__)

METHODS = ("ignore", "label_all_bad", "hca", "parceling", "reweight_banded", "heckman_two_step", "basl")

_DEFAULTS: dict[str, dict[str, Any]] = {
    "ignore": {},
    "label_all_bad": {},
    "hca": {"cutoff": 0.5},
    "parceling": {"n_bands": 10, "risk_multiplier": 1.25},
    "reweight_banded": {"n_bands": 10},
    "heckman_two_step": {},
    "basl": {"config": None},
}


@dataclass(frozen=True)
class CorrectionMethod:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown correction method {self.name!r}")
        merged = dict(_DEFAULTS[self.name])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        merged.update(self.params)
        if self.name == "hca" and not 0 < merged["cutoff"] < 1:
            raise ValueError("hca cutoff must lie in (0, 1)")
        if self.name in ("parceling", "reweight_banded") and merged["n_bands"] < 2:
            raise ValueError("n_bands must be >= 2")
        if self.name == "parceling" and merged["risk_multiplier"] < 1:
            raise ValueError("risk_multiplier must be >= 1")
        if self.name == "basl":
            c = merged["config"]
            if c is None:
                c = BaslConfig()
            elif isinstance(c, dict):
                c = BaslConfig.from_dict(c)
            merged["config"] = c
        object.__setattr__(self, "params", merged)

    @classmethod
    def from_dict(cls, d) -> "CorrectionMethod":
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], dict(d.get("params", {})))


def _plain(d: Dataset, labels=None) -> Dataset:
    y = d.require_labels() if labels is None else labels
    return Dataset(d.features, y, np.ones(d.n, dtype=np.int8), d.ids, d.feature_names)


def _weak(accepts: Dataset, seed: "RngSeed | int" = 0, lam: float = 1e-3) -> Scorecard:
    return fit_l1_logistic(_plain(accepts), FitOptions(l1_lambda=lam, seed=as_seed(seed)))


def label_all_bad(accepts: Dataset, rejects: Dataset) -> Dataset:
    return concat([_plain(accepts), _plain(rejects, np.ones(rejects.n, dtype=np.int8))])


def hca(accepts: Dataset, rejects: Dataset, cutoff: float = 0.5, *, weak: Scorecard | None = None) -> Dataset:
    """Hard cutoff augmentation: reject is bad iff its weak-learner PD >= ``cutoff``."""
    if not 0 < cutoff < 1:
        raise ValueError("cutoff must lie in (0, 1)")
    weak = weak or _weak(accepts)
    y = (predict_proba(weak, rejects) >= cutoff).astype(np.int8)
    return concat([_plain(accepts), _plain(rejects, y)])


def _band_edges(scores: np.ndarray, n_bands: int) -> np.ndarray:
    """Inner quantile edges; bands are (-inf, e1], (e1, e2], ..., (e_last, inf)."""
    edges = np.quantile(scores, np.linspace(0, 1, n_bands + 1)[1:-1])
    return np.unique(edges)


def _assign(scores, edges):
    return np.searchsorted(edges, scores, side="left")


def _merge_empty(counts: np.ndarray, what: str) -> np.ndarray:
    """Map each band to a non-empty band (empty bands join their lower neighbour)."""
    target = np.arange(len(counts))
    if np.all(counts == 0):
        raise ValueError(f"no {what} in any band")
    for b in range(len(counts)):
        if counts[b] == 0:
            warnings.warn(f"band {b} has no {what}; merging with neighbour", RuntimeWarning, stacklevel=3)
            nz = np.flatnonzero(counts > 0)
            target[b] = nz[np.argmin(np.abs(nz - b) * 2 + (nz > b))]
    return target


def parceling(accepts: Dataset, rejects: Dataset, n_bands: int = 10, risk_multiplier: float = 1.25,
              seed: "RngSeed | int" = 0, *, weak: Scorecard | None = None) -> Dataset:
    """Label rejects bad with probability min(1, r * p_b), p_b the accepts' bad rate in their score band."""
    if n_bands < 2:
        raise ValueError("n_bands must be >= 2")
    weak = weak or _weak(accepts)
    y_a = accepts.require_labels()
    s_a = predict_proba(weak, accepts)
    s_r = predict_proba(weak, rejects)
    edges = _band_edges(s_a, n_bands)
    nb = len(edges) + 1
    band_a = _assign(s_a, edges)
    counts = np.bincount(band_a, minlength=nb)
    target = _merge_empty(counts, "accepts")
    band_a, band_r = target[band_a], target[_assign(s_r, edges)]
    rate = np.bincount(band_a, weights=y_a, minlength=nb) / np.maximum(np.bincount(band_a, minlength=nb), 1)
    p = np.minimum(1.0, risk_multiplier * rate[band_r])
    rng = as_seed(seed).generator()
    y_r = (rng.random(rejects.n) < p).astype(np.int8)
    return concat([_plain(accepts), _plain(rejects, y_r)])


def weights_from_bands(band_accepts, band_rejects, n_bands: int) -> np.ndarray:
    """Banded importance weights from band memberships.

    Each accept in band b gets (accepts + rejects in b) / (accepts in b),
    then weights are rescaled to mean one over the accepts.
    """
    ba = np.asarray(band_accepts, dtype=int)
    br = np.asarray(band_rejects, dtype=int)
    ca = np.bincount(ba, minlength=n_bands).astype(float)
    cr = np.bincount(br, minlength=n_bands).astype(float) if len(br) else np.zeros(n_bands)
    target = _merge_empty(ca, "accepts")
    if np.any(target != np.arange(n_bands)):
        ca = np.bincount(target[ba], minlength=n_bands).astype(float)
        cr = np.bincount(target[br], minlength=n_bands).astype(float) if len(br) else np.zeros(n_bands)
        ba = target[ba]
    raw = (ca + cr) / np.where(ca > 0, ca, 1.0)
    w = raw[ba]
    return w / w.mean()


def banded_weights(accepts: Dataset, rejects: Dataset, n_bands: int = 10, *,
                   weak: Scorecard | None = None) -> np.ndarray:
    """Importance weights p_D(x) / p_Da(x) approximated on weak-learner score bands.

    Band edges are quantiles of the pooled accept + reject scores.
    """
    if n_bands < 2:
        raise ValueError("n_bands must be >= 2")
    if rejects.n == 0:
        return np.ones(accepts.n)
    weak = weak or _weak(accepts)
    s_a = predict_proba(weak, accepts)
    s_r = predict_proba(weak, rejects)
    edges = _band_edges(np.r_[s_a, s_r], n_bands)
    return weights_from_bands(_assign(s_a, edges), _assign(s_r, edges), len(edges) + 1)


# ---------------------------------------------------------------------------
# two-step Heckman


def heckman_two_step(accepts: Dataset, rejects: Dataset, learner_opts: FitOptions | None = None) -> Scorecard:
    """Probit selection equation on accepts + rejects, inverse Mills ratio appended
    as an extra feature, strong learner fit on the accepts."""
    if accepts.n == 0 or rejects.n == 0:
        raise ValueError("heckman_two_step needs accepts and rejects")
    learner_opts = learner_opts or FitOptions()
    pool = Dataset(np.vstack([accepts.features, rejects.features]), None,
                   np.r_[np.ones(accepts.n), np.zeros(rejects.n)].astype(np.int8))
    sel = fit_probit(pool, learner_opts, target="accepted")
    imr = inverse_mills(probit_index(sel, accepts))
    aug = Dataset(np.column_stack([accepts.features, imr]), accepts.require_labels(),
                  np.ones(accepts.n, dtype=np.int8), accepts.ids)
    outcome = fit_gbt(aug, learner_opts)
    return Scorecard("heckman", {"selection": {"params": sel.params, "k": sel.feature_arity},
                                 "outcome": {"params": outcome.params, "k": outcome.feature_arity}},
                     accepts.k, {"n": accepts.n})


@register("heckman")
def _predict_heckman(m, X):
    sel = Scorecard("probit", m.params["selection"]["params"], int(m.params["selection"]["k"]))
    out = Scorecard("gbt", m.params["outcome"]["params"], int(m.params["outcome"]["k"]))
    imr = inverse_mills(probit_index(sel, X))
    return expit(gbt_margin(out, np.column_stack([X, imr])))


# ---------------------------------------------------------------------------
# dispatch


def default_basl_prior(split: Split, seed: "RngSeed | int" = 0) -> Prior:
    """Prior for BASL's stopping rule: a weak learner trained on the accepts rescoring
    the validation rejects."""
    _, val_rej = split_validation(split.validation)
    return build_prior(val_rej, _weak(split.train_accepts, seed))


def train_corrected(method: CorrectionMethod, split: Split, learner_opts: FitOptions | None = None,
                    *, prior: Prior | None = None) -> Scorecard:
    """Correct the training sample with ``method`` and fit the strong learner."""
    learner_opts = learner_opts or FitOptions()
    acc, rej = split.train_accepts, split.rejects
    name, p = method.name, method.params
    seed = learner_opts.seed
    if name == "ignore":
        return fit_gbt(_plain(acc), learner_opts)
    if name == "label_all_bad":
        return fit_gbt(label_all_bad(acc, rej), learner_opts)
    if name == "hca":
        return fit_gbt(hca(acc, rej, p["cutoff"], weak=_weak(acc, seed.child(11))), learner_opts)
    if name == "parceling":
        aug = parceling(acc, rej, p["n_bands"], p["risk_multiplier"], seed.child(12),
                        weak=_weak(acc, seed.child(11)))
        return fit_gbt(aug, learner_opts)
    if name == "reweight_banded":
        w = banded_weights(acc, rej, p["n_bands"], weak=_weak(acc, seed.child(11)))
        return fit_gbt(_plain(acc), learner_opts.replace(sample_weights=w))
    if name == "heckman_two_step":
        return heckman_two_step(acc, rej, learner_opts)
    cfg: BaslConfig = p["config"]
    if prior is None:
        prior = default_basl_prior(split, seed.child(13))
    return basl_fit(acc, rej, split.validation, prior, cfg, learner_opts).scorecard


# ---------------------------------------------------------------------------
# evaluation benchmark


def weighted_validation(f: Scorecard, validation_accepts: Dataset, weights, metric: MetricSpec) -> MetricValue:
    """Importance-weighted metric on labeled validation accepts."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (validation_accepts.n,):
        raise ValueError("weights misaligned with validation accepts")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    return metric.compute(predict_proba(f, validation_accepts), validation_accepts.require_labels(), w)
