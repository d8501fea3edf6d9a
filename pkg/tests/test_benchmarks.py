import warnings

import numpy as np
import pytest

from biaslab.benchmarks import (METHODS, CorrectionMethod, _band_edges, banded_weights, hca, heckman_two_step,
                                label_all_bad, parceling, train_corrected, weighted_validation, weights_from_bands)
from biaslab.data import Dataset
from biaslab.learners import FitOptions, GbtParams, Scorecard, constant_scorecard, predict_proba, scorecard_from_json, scorecard_to_json
from biaslab.metrics import MetricSpec


def _identity_weak():
    return Scorecard("l1_logistic", {"intercept": 0.0, "coef": np.array([1.0]), "mean": np.zeros(1),
                                     "scale": np.ones(1)}, 1)


def _acc_rej(seed=0, n_acc=200, n_rej=300):
    rng = np.random.default_rng(seed)
    Xa = rng.normal(-0.5, 1, size=(n_acc, 1))
    ya = (rng.random(n_acc) < 1 / (1 + np.exp(-Xa[:, 0]))).astype(int)
    acc = Dataset(Xa, ya, np.ones(n_acc))
    rej = Dataset(rng.normal(0.8, 1, size=(n_rej, 1)), None, np.zeros(n_rej), np.arange(n_acc, n_acc + n_rej))
    return acc, rej


class TestAugmentation:
    def test_label_all_bad(self):
        acc, rej = _acc_rej()
        aug = label_all_bad(acc, rej)
        assert aug.n == acc.n + rej.n
        assert np.all(aug.labels[acc.n:] == 1)

    def test_hca_uses_the_cutoff(self):
        acc, rej = _acc_rej()
        aug = hca(acc, rej, 0.5, weak=_identity_weak())
        assert np.array_equal(aug.labels[acc.n:], (rej.features[:, 0] >= 0).astype(int))
        with pytest.raises(ValueError):
            hca(acc, rej, 1.0)

    def test_parceling_inflates_band_bad_rates(self):
        acc, rej = _acc_rej(1, 2000, 4000)
        aug = parceling(acc, rej, 5, 1.25, seed=3, weak=_identity_weak())
        assert aug.labels[acc.n:].mean() > acc.labels.mean()
        plain = parceling(acc, rej, 5, 1.0, seed=3, weak=_identity_weak())
        assert aug.labels[acc.n:].mean() >= plain.labels[acc.n:].mean()


class TestWeights:
    def test_weights_from_bands_hand_case(self):
        w = weights_from_bands([0, 0, 1, 1], [1, 1, 1, 1], 2)
        raw = np.array([1.0, 1.0, 3.0, 3.0])
        assert np.allclose(w, raw / raw.mean())
        assert w.mean() == pytest.approx(1.0)

    def test_two_band_example_has_mean_one(self):
        w = weights_from_bands([0] * 8 + [1] * 2, [1] * 10, 2)
        assert np.allclose(w[:8], 0.5) and np.allclose(w[8:], 3.0)
        assert abs(w.mean() - 1.0) <= 1e-12

    def test_empty_band_is_merged(self):
        with pytest.warns(RuntimeWarning, match="merging"):
            w = weights_from_bands([0, 0, 2], [1, 1, 2], 3)
        assert np.all(np.isfinite(w))

    def test_no_rejects_gives_unit_weights(self):
        acc, _ = _acc_rej()
        empty = Dataset(np.zeros((0, 1)), None, np.zeros(0))
        assert np.all(banded_weights(acc, empty) == 1.0)

    def test_upweights_reject_like_accepts(self):
        acc, rej = _acc_rej(2)
        w = banded_weights(acc, rej, 5, weak=_identity_weak())
        x = acc.features[:, 0]
        assert w[x > np.quantile(x, 0.9)].mean() > w[x < np.quantile(x, 0.1)].mean()

    def test_band_edges_are_unique(self):
        assert len(_band_edges(np.zeros(50), 10)) == 1

    def test_weighted_validation_checks(self):
        acc, _ = _acc_rej()
        f = constant_scorecard(0.3, 1)
        with pytest.raises(ValueError):
            weighted_validation(f, acc, np.ones(3), MetricSpec("brier"))
        with pytest.raises(ValueError):
            weighted_validation(f, acc, np.zeros(acc.n), MetricSpec("brier"))
        assert weighted_validation(f, acc, np.ones(acc.n), MetricSpec("brier")).value > 0


class TestHeckman:
    def test_scores_and_serializes(self):
        acc, rej = _acc_rej(3)
        m = heckman_two_step(acc, rej, FitOptions(gbt=GbtParams(n_trees=20)))
        p = predict_proba(m, rej)
        assert p.shape == (rej.n,) and np.all((p >= 0) & (p <= 1))
        back = scorecard_from_json(scorecard_to_json(m))
        assert np.array_equal(predict_proba(back, rej), p)


class TestDispatch:
    def test_unknown_method_and_params(self):
        with pytest.raises(ValueError):
            CorrectionMethod("magic")
        with pytest.raises(ValueError, match="unknown parameters"):
            CorrectionMethod("hca", {"cut": 0.2})
        with pytest.raises(ValueError):
            CorrectionMethod("parceling", {"risk_multiplier": 0.5})

    def test_from_dict(self):
        m = CorrectionMethod.from_dict({"name": "basl", "params": {"config": {"j_max": 2}}})
        assert m.params["config"].j_max == 2
        assert CorrectionMethod.from_dict("hca").params["cutoff"] == 0.5

    @pytest.mark.parametrize("name", METHODS)
    def test_every_method_trains(self, name, small_loop):
        params = {"config": {"j_max": 1, "forest_trees": 10, "bayes": {"j_max": 20}}} if name == "basl" else {}
        opts = FitOptions(gbt=GbtParams(n_trees=10))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m = train_corrected(CorrectionMethod(name, params), small_loop.split, opts)
        p = predict_proba(m, small_loop.split.holdout)
        assert np.all((p >= 0) & (p <= 1))
