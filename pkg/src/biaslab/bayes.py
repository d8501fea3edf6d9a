"""Bayesian (Monte-Carlo) extension of performance metrics to samples with unlabeled rejects."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, RngSeed, UNKNOWN, as_seed
from .learners import Scorecard, predict_proba
from .metrics import FixedScoreEvaluator, MetricSpec, MetricUndefined, MetricValue

PRIOR_SOURCES = ("previous_scorecard", "original_scores", "constant", "oracle", "corrupted")
PRIOR_CLIP = 1e-6


@dataclass(frozen=True, eq=False)
class Prior:
    """P(bad | x) for each reject row, aligned by id."""

    probs: np.ndarray
    ids: np.ndarray
    source: str = "previous_scorecard"

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).copy()
        if p.ndim != 1 or np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ValueError("prior probabilities must lie in [0, 1]")
        ids = np.asarray(self.ids).copy()
        if ids.shape != p.shape:
            raise ValueError("prior ids misaligned with probabilities")
        if self.source not in PRIOR_SOURCES:
            raise ValueError(f"unknown prior source {self.source!r}")
        p.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "ids", ids)

    def aligned_to(self, d: Dataset) -> np.ndarray:
        """Prior probabilities in the row order of ``d``."""
        if len(d.ids) == len(self.ids) and np.array_equal(d.ids, self.ids):
            return self.probs
        pos = {v: i for i, v in enumerate(self.ids.tolist())}
        try:
            return self.probs[[pos[v] for v in d.ids.tolist()]]
        except KeyError as exc:
            raise ValueError(f"prior has no entry for reject id {exc.args[0]!r}") from None


@dataclass(frozen=True)
class BayesConfig:
    j_max: int = 1000
    epsilon: float = 1e-4
    min_iterations: int = 10
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))
    max_skip_fraction: float = 0.5

    def __post_init__(self):
        if not (self.j_max >= self.min_iterations >= 2):
            raise ValueError("need j_max >= min_iterations >= 2")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class BayesResult:
    value: MetricValue
    iterations: int
    skipped: int
    draws: np.ndarray
    running_mean: np.ndarray

    def __float__(self):
        return float(self.value)


def build_prior(rejects: Dataset, source, *, kind: str | None = None) -> Prior:
    """Prior from a scorecard (rescoring rejects) or from a stored score vector."""
    if isinstance(source, Scorecard):
        p = predict_proba(source, rejects)
        kind = kind or "previous_scorecard"
    else:
        p = np.asarray(source, dtype=float).ravel()
        if p.shape != (rejects.n,):
            raise ValueError("score vector misaligned with rejects")
        kind = kind or "original_scores"
    return Prior(np.clip(p, PRIOR_CLIP, 1 - PRIOR_CLIP), rejects.ids, kind)


def constant_prior(rejects: Dataset, rate: float) -> Prior:
    return Prior(np.full(rejects.n, float(rate)), rejects.ids, "constant")


def oracle_prior(rejects: Dataset, token) -> Prior:
    """Prior equal to the sealed ground truth (0/1). Needs the oracle capability."""
    return Prior(rejects.sealed_labels(token).astype(float), rejects.ids, "oracle")


def corrupt_prior(p: Prior, flip_rate: float = 0.0, shift: float = 0.0, seed: "RngSeed | int" = 0) -> Prior:
    """Replace q by 1 - q with probability ``flip_rate``, then add ``shift`` and clip to [0, 1]."""
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError("flip_rate must lie in [0, 1]")
    rng = as_seed(seed).generator()
    q = p.probs.copy()
    flip = rng.random(len(q)) < flip_rate
    q[flip] = 1.0 - q[flip]
    q = np.clip(q + shift, 0.0, 1.0)
    return Prior(q, p.ids, "corrupted")


def bayesian_metric(f: "Scorecard | np.ndarray", accepts: Dataset, rejects: Dataset, prior: Prior,
                    metric: MetricSpec, cfg: BayesConfig | None = None) -> BayesResult:
    """Average a metric over pseudo-labelings of the rejects drawn from ``prior``.

    Iterates until the running mean moves by less than ``epsilon`` (after
    ``min_iterations``) or ``j_max`` draws. Realisations on which the metric
    is undefined are skipped; more than ``max_skip_fraction`` skips fail.
    ``f`` may be a scorecard or precomputed scores for ``accepts`` followed
    by ``rejects``.
    """
    cfg = cfg or BayesConfig()
    y_a = accepts.require_labels().astype(np.int8)
    if isinstance(f, Scorecard):
        if accepts.n and accepts.k != f.feature_arity or rejects.n and rejects.k != f.feature_arity:
            raise ValueError("scorecard arity does not match the evaluation sample")
        parts = [predict_proba(f, accepts)]
        if rejects.n:
            parts.append(predict_proba(f, rejects))
        scores = np.concatenate(parts)
    else:
        scores = np.asarray(f, dtype=float)
        if scores.shape != (accepts.n + rejects.n,):
            raise ValueError("score vector misaligned with accepts + rejects")
    q = prior.aligned_to(rejects) if rejects.n else np.zeros(0)

    evaluator = FixedScoreEvaluator(metric, scores)
    rng = cfg.seed.generator()
    n_a = accepts.n
    y = np.empty(len(scores), dtype=np.int8)
    y[:n_a] = y_a

    draws: list[float] = []
    means: list[float] = []
    mean = 0.0
    skipped = 0
    j = 0
    while j < cfg.j_max:
        j += 1
        y[n_a:] = rng.random(len(q)) < q
        try:
            v = evaluator(y)
        except MetricUndefined:
            skipped += 1
            if skipped > cfg.max_skip_fraction * cfg.j_max:
                raise MetricUndefined(f"metric undefined on {skipped} of {j} label draws")
            continue
        draws.append(v)
        prev = mean
        mean = prev + (v - prev) / len(draws)   # exact when every draw is equal
        means.append(mean)
        if len(draws) >= cfg.min_iterations and abs(mean - prev) < cfg.epsilon:
            break
    if not draws:
        raise MetricUndefined("metric undefined on every label draw")
    if skipped > cfg.max_skip_fraction * j:
        raise MetricUndefined(f"metric undefined on {skipped} of {j} label draws")
    value = MetricValue(float(mean), len(scores), metric.orientation)
    return BayesResult(value, j, skipped, np.array(draws), np.array(means))


def split_validation(validation: Dataset) -> tuple[Dataset, Dataset]:
    """Labeled accepts and unlabeled rejects of a mixed validation sample."""
    if validation.accepted is None:
        raise ValueError("validation sample needs acceptance flags")
    acc = validation.accepts()
    if acc.n == 0 or not acc.has_labels:
        raise ValueError("validation sample lacks labeled accepts")
    return acc, validation.rejects()


def write_trace(result: BayesResult, path) -> None:
    """Convergence trace as CSV: iteration, draw value, running mean."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "value", "running_mean"])
        for i, (v, m) in enumerate(zip(result.draws, result.running_mean), start=1):
            w.writerow([i, repr(float(v)), repr(float(m))])
