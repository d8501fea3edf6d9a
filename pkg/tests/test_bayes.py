import numpy as np
import pytest

from biaslab.bayes import (BayesConfig, Prior, bayesian_metric, build_prior, constant_prior, corrupt_prior,
                           oracle_prior, split_validation, write_trace)
from biaslab.data import ORACLE_ACCESS, UNKNOWN, Dataset, RngSeed
from biaslab.learners import constant_scorecard
from biaslab.metrics import MetricSpec, MetricUndefined, auc


def _sample(n_acc=60, n_rej=40, seed=0):
    rng = np.random.default_rng(seed)
    acc = Dataset(rng.normal(size=(n_acc, 2)), rng.integers(0, 2, n_acc), np.ones(n_acc), np.arange(n_acc))
    truth = rng.integers(0, 2, n_rej)
    rej = Dataset(rng.normal(size=(n_rej, 2)), None, np.zeros(n_rej), np.arange(n_acc, n_acc + n_rej),
                  _sealed=truth)
    scores = rng.random(n_acc + n_rej)
    return acc, rej, scores


def test_no_rejects_reduces_to_the_plain_metric():
    acc, _, scores = _sample()
    empty = acc.take(np.zeros(0, dtype=int))
    for spec in (MetricSpec("abr"), MetricSpec("auc"), MetricSpec("pauc"), MetricSpec("brier")):
        r = bayesian_metric(scores[:acc.n], acc, empty, Prior(np.zeros(0), np.zeros(0)), spec)
        assert r.value.value == spec.compute(scores[:acc.n], acc.labels).value
        assert r.iterations == BayesConfig().min_iterations


def test_degenerate_prior_converges_at_min_iterations():
    acc, rej, scores = _sample()
    prior = Prior(rej.sealed_labels(ORACLE_ACCESS).astype(float), rej.ids, "oracle")
    cfg = BayesConfig(min_iterations=7)
    r = bayesian_metric(scores, acc, rej, prior, MetricSpec("auc"), cfg)
    assert r.iterations == 7
    assert np.var(r.draws) == 0.0
    y = np.r_[acc.labels, rej.sealed_labels(ORACLE_ACCESS)]
    assert r.value.value == auc(scores, y).value


def test_constant_prior_mean_matches_expectation_for_brier():
    acc, rej, scores = _sample(n_acc=30, n_rej=30)
    q = 0.3
    cfg = BayesConfig(j_max=4000, epsilon=1e-12, min_iterations=4000)
    r = bayesian_metric(scores, acc, rej, constant_prior(rej, q), MetricSpec("brier"), cfg)
    s_r = scores[acc.n:]
    expected = (np.sum((scores[:acc.n] - acc.labels) ** 2)
                + np.sum(q * (s_r - 1) ** 2 + (1 - q) * s_r ** 2)) / len(scores)
    assert abs(r.value.value - expected) < 3e-3


def test_sd_shrinks_with_more_draws():
    acc, rej, scores = _sample()
    prior = constant_prior(rej, 0.4)

    def sd(j):
        vals = [bayesian_metric(scores, acc, rej, prior, MetricSpec("abr"),
                                BayesConfig(j_max=j, epsilon=1e-12, min_iterations=j, seed=RngSeed(s))).value.value
                for s in range(40)]
        return np.std(vals, ddof=1)

    assert 1.4 <= sd(25) / sd(100) <= 2.6


def test_running_mean_is_recorded(tmp_path):
    acc, rej, scores = _sample()
    r = bayesian_metric(scores, acc, rej, constant_prior(rej, 0.5), MetricSpec("abr"))
    assert len(r.running_mean) == len(r.draws) == r.iterations - r.skipped
    assert r.running_mean[-1] == r.value.value
    p = tmp_path / "trace.csv"
    write_trace(r, p)
    assert p.read_text().splitlines()[0] == "iteration,value,running_mean"


def test_prior_alignment_by_id():
    acc, rej, scores = _sample()
    q = np.linspace(0, 1, rej.n)
    prior = Prior(q[::-1], rej.ids[::-1])
    assert np.array_equal(prior.aligned_to(rej), q)
    with pytest.raises(ValueError, match="no entry"):
        Prior(q[:5], rej.ids[:5]).aligned_to(rej)


def test_too_many_undefined_draws():
    acc = Dataset(np.zeros((2, 1)), [0, 0], [1, 1])
    rej = Dataset(np.ones((3, 1)), None, [0, 0, 0], ids=[5, 6, 7])
    with pytest.raises(MetricUndefined):
        bayesian_metric(np.arange(5.0) / 5, acc, rej, constant_prior(rej, 0.0), MetricSpec("auc"))


def test_prior_builders():
    acc, rej, _ = _sample()
    p = build_prior(rej, constant_scorecard(0.0, 2))
    assert p.source == "previous_scorecard" and np.all(p.probs > 0)
    assert build_prior(rej, np.full(rej.n, 0.2)).source == "original_scores"
    with pytest.raises(PermissionError):
        oracle_prior(rej, None)
    flipped = corrupt_prior(constant_prior(rej, 0.2), flip_rate=1.0)
    assert np.allclose(flipped.probs, 0.8)
    shifted = corrupt_prior(constant_prior(rej, 0.9), shift=0.3)
    assert np.all(shifted.probs == 1.0)


def test_split_validation():
    v = Dataset(np.zeros((4, 1)), [0, 1, UNKNOWN, UNKNOWN], [1, 1, 0, 0])
    a, r = split_validation(v)
    assert a.n == 2 and r.n == 2 and r.labels is None


def test_scorecard_input():
    acc, rej, _ = _sample()
    r = bayesian_metric(constant_scorecard(0.3, 2), acc, rej, constant_prior(rej, 0.3), MetricSpec("brier"))
    assert 0 < r.value.value < 1
