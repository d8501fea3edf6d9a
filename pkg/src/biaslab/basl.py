"""Bias-aware self-learning: filtered, asymmetric, early-stopped pseudo-labeling of rejects."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bayes import BayesConfig, Prior, bayesian_metric, split_validation
from .data import Dataset, RngSeed, UNKNOWN, concat
from .learners import FitOptions, Scorecard, fit_gbt, fit_isolation_forest, fit_l1_logistic, predict_proba
from .metrics import MetricSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BaslConfig:
    beta_upper: float = 0.1
    beta_lower: float = 0.1
    rho: float = 0.5
    gamma: float = 0.05
    theta: float = 2.0
    j_max: int = 10
    patience: int = 1
    bayes: BayesConfig = field(default_factory=BayesConfig)
    metric: MetricSpec = field(default_factory=lambda: MetricSpec("abr"))
    forest_trees: int = 100
    forest_subsample: int = 256
    weak_lambda: float = 1e-3
    compare_baseline: bool = False
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))

    def __post_init__(self):
        if not (0 <= self.beta_upper < 1 and 0 <= self.beta_lower < 1
                and self.beta_upper + self.beta_lower < 1):
            raise ValueError("need beta_u, beta_l in [0, 1) with beta_u + beta_l < 1")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not 0 < self.gamma < 1 or self.theta < 1 or self.gamma * (1 + self.theta) >= 1:
            raise ValueError("need gamma in (0, 1), theta >= 1 and gamma * (1 + theta) < 1")
        if self.j_max < 0 or self.patience < 1:
            raise ValueError("j_max must be >= 0 and patience >= 1")

    @classmethod
    def from_dict(cls, d) -> "BaslConfig":
        d = dict(d)
        if "bayes" in d:
            b = dict(d["bayes"])
            if "seed" in b:
                b["seed"] = RngSeed(int(b["seed"]))
            d["bayes"] = BayesConfig(**b)
        if "metric" in d:
            d["metric"] = MetricSpec.from_dict(d["metric"])
        if "seed" in d:
            d["seed"] = RngSeed(int(d["seed"]))
        return cls(**d)


@dataclass
class IterationRecord:
    iteration: int
    n_good: int
    n_bad: int
    metric: float | None
    improved: bool
    train_size: int


@dataclass(frozen=True, eq=False)
class BaslState:
    """Augmented training sample, remaining rejects and fixed labeling cutoffs."""

    augmented_train: Dataset
    origin: np.ndarray                     # 0 = accept, 1 = inferred reject
    remaining_rejects: Dataset
    thresholds: tuple[float, float] | None = None     # (good cutoff, bad cutoff)
    iteration: int = 0
    last_counts: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if set(self.augmented_train.ids.tolist()) & set(self.remaining_rejects.ids.tolist()):
            raise ValueError("augmented sample and remaining rejects overlap")


def _n_of(frac: float, m: int) -> int:
    return int(math.floor(frac * m + 1e-9))


def filter_rejects(accepts: Dataset, rejects: Dataset, beta=(0.1, 0.1), *, n_trees: int = 100,
                   subsample: int = 256, seed: "RngSeed | int" = 0) -> tuple[Dataset, Dataset]:
    """Drop the most novel (top ``beta[0]``) and least novel (bottom ``beta[1]``) rejects.

    Novelty is the isolation-forest score of a forest grown on the accepts.
    Returns ``(kept, dropped)``; both preserve input order.
    """
    beta_u, beta_l = beta
    if accepts.n == 0 or rejects.n == 0:
        raise ValueError("filtering needs non-empty accepts and rejects")
    if beta_u == 0 and beta_l == 0:
        return rejects, rejects.take(np.zeros(0, dtype=int))
    forest = fit_isolation_forest(accepts, n_trees, subsample, seed)
    score = forest.score(rejects)
    order = np.argsort(score, kind="stable")
    m = rejects.n
    drop = np.zeros(m, dtype=bool)
    nl, nu = _n_of(beta_l, m), _n_of(beta_u, m)
    drop[order[:nl]] = True
    if nu:
        drop[order[m - nu:]] = True
    if drop.all():
        raise ValueError("filtering removed every reject")
    return rejects.take(~drop), rejects.take(drop)


def labeling_step(state: BaslState, weak: Scorecard, cfg: BaslConfig, rng: np.random.Generator) -> BaslState:
    """One round of pseudo-labeling.

    A fraction ``rho`` of the remaining rejects is drawn and scored. On the
    first round the lowest ``gamma`` share is labeled good and the highest
    ``gamma * theta`` share bad, and the scores at those cut points become
    fixed absolute thresholds; later rounds compare against them. Sampled but
    unlabeled rejects return to the pool.
    """
    rem = state.remaining_rejects
    m = rem.n
    if m == 0:
        return replace(state, iteration=state.iteration + 1, last_counts=(0, 0))
    n_draw = max(1, int(round(cfg.rho * m)))
    drawn = np.sort(rng.choice(m, size=n_draw, replace=False))
    s = predict_proba(weak, rem.take(drawn))

    thresholds = state.thresholds
    if thresholds is None:
        order = np.argsort(s, kind="stable")
        n_good = _n_of(cfg.gamma, n_draw)
        n_bad = _n_of(cfg.gamma * cfg.theta, n_draw)
        good = np.zeros(n_draw, dtype=bool)
        bad = np.zeros(n_draw, dtype=bool)
        good[order[:n_good]] = True
        if n_bad:
            bad[order[n_draw - n_bad:]] = True
        t_good = float(s[order[n_good - 1]]) if n_good else -np.inf
        t_bad = float(s[order[n_draw - n_bad]]) if n_bad else np.inf
        thresholds = (t_good, t_bad)
    else:
        t_good, t_bad = thresholds
        good = s <= t_good
        bad = (s >= t_bad) & ~good

    chosen = drawn[good | bad]
    labels = np.where(bad[good | bad], 1, 0).astype(np.int8)
    newly = rem.take(chosen)
    newly = Dataset(newly.features, labels, np.ones(len(chosen), dtype=np.int8), newly.ids,
                    newly.feature_names)
    keep = np.ones(m, dtype=bool)
    keep[chosen] = False
    aug = concat([state.augmented_train, newly])
    origin = np.r_[state.origin, np.ones(len(chosen), dtype=np.int8)]
    return BaslState(aug, origin, rem.take(keep), thresholds, state.iteration + 1,
                     (int(good.sum()), int(bad.sum())))


def _as_train(accepts: Dataset) -> Dataset:
    # strip sealed channel and acceptance flags: the augmented sample is plain labeled data
    return Dataset(accepts.features, accepts.require_labels(), np.ones(accepts.n, dtype=np.int8),
                   accepts.ids, accepts.feature_names)


@dataclass
class BaslResult:
    scorecard: Scorecard
    history: list[IterationRecord]
    state: BaslState
    best_iteration: int
    dropped: int

    def best_metric(self) -> float | None:
        for r in self.history:
            if r.iteration == self.best_iteration:
                return r.metric
        return None


def basl_fit(accepts: Dataset, rejects: Dataset, validation: Dataset, prior: Prior,
             cfg: BaslConfig | None = None, strong_opts: FitOptions | None = None) -> BaslResult:
    """Filter, iteratively pseudo-label with the weak learner, refit the strong learner,
    and keep the model with the best Bayesian stopping metric."""
    cfg = cfg or BaslConfig()
    strong_opts = strong_opts or FitOptions(seed=cfg.seed.child(1))
    train = _as_train(accepts)
    if cfg.j_max == 0:
        model = fit_gbt(train, strong_opts)
        state = BaslState(train, np.zeros(train.n, dtype=np.int8), rejects.with_labels(None))
        return BaslResult(model, [], state, 0, 0)

    val_acc, val_rej = split_validation(validation)
    prior.aligned_to(val_rej)    # fail early on misalignment

    kept, dropped = filter_rejects(train, rejects.with_labels(None), (cfg.beta_upper, cfg.beta_lower),
                                   n_trees=cfg.forest_trees, subsample=cfg.forest_subsample,
                                   seed=cfg.seed.child(2))
    state = BaslState(train, np.zeros(train.n, dtype=np.int8), kept)
    rng = cfg.seed.child(3).generator()
    weak_opts = FitOptions(l1_lambda=cfg.weak_lambda, seed=cfg.seed.child(4))

    def stopping_metric(model, j):
        bm = bayesian_metric(model, val_acc, val_rej, prior, cfg.metric,
                             replace(cfg.bayes, seed=cfg.bayes.seed.child(j)))
        return float(bm.value)

    lower = cfg.metric.orientation == "lower_better"
    history: list[IterationRecord] = []
    best: tuple[float, int, Scorecard] | None = None
    if cfg.compare_baseline:
        # the accepts-only model becomes the reference the labeled iterations must beat
        base_model = fit_gbt(train, strong_opts)
        v0 = stopping_metric(base_model, 0)
        history.append(IterationRecord(0, 0, 0, v0, True, train.n))
        best = (v0, 0, base_model)
    strikes = 0
    for j in range(1, cfg.j_max + 1):
        if state.remaining_rejects.n == 0:
            break
        weak = fit_l1_logistic(state.augmented_train, weak_opts)
        state = labeling_step(state, weak, cfg, rng)
        n_good, n_bad = state.last_counts
        if n_good + n_bad == 0:
            history.append(IterationRecord(j, 0, 0, None, False, state.augmented_train.n))
            break
        model = fit_gbt(state.augmented_train, strong_opts)
        v = stopping_metric(model, j)
        improved = best is None or (v < best[0] if lower else v > best[0])
        history.append(IterationRecord(j, n_good, n_bad, v, improved, state.augmented_train.n))
        if improved:
            best = (v, j, model)
            strikes = 0
        else:
            strikes += 1
            if strikes >= cfg.patience:
                break
    if best is None:
        return BaslResult(fit_gbt(train, strong_opts), history, state, 0, dropped.n)
    return BaslResult(best[2], history, state, best[1], dropped.n)


def write_history(history: list[IterationRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "n_good", "n_bad", "stopping_metric", "improved"])
        for r in history:
            w.writerow([r.iteration, r.n_good, r.n_bad,
                        "" if r.metric is None else repr(r.metric), int(r.improved)])
