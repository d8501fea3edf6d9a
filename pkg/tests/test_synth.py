import numpy as np
import pytest
from hypothesis import given, strategies as st

from biaslab.synth import (Component, MixtureSpec, MnarSpec, apply_mnar, default_mixture, random_covariance,
                           sample_applicants)


def test_sample_is_deterministic_and_sized():
    spec = default_mixture()
    a = sample_applicants(spec, 500, 4)
    b = sample_applicants(spec, 500, 4)
    assert a.n == 500 and a.k == 3
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_bad_rate_is_respected():
    spec = default_mixture(bad_rate=0.3)
    d = sample_applicants(spec, 20000, 1)
    assert abs(d.labels.mean() - 0.3) < 0.015


def test_class_means_match_the_spec():
    spec = MixtureSpec.simple([0.0, 0.0], [2.0, -1.0], bad_rate=0.5)
    d = sample_applicants(spec, 20000, 2)
    assert np.allclose(d.features[d.labels == 1].mean(axis=0), [2.0, -1.0], atol=0.05)
    assert np.allclose(d.features[d.labels == 0].mean(axis=0), [0.0, 0.0], atol=0.05)


def test_ids_are_offset():
    d = sample_applicants(default_mixture(), 5, 0, id_offset=100)
    assert d.ids.tolist() == [100, 101, 102, 103, 104]


def test_mixture_validation():
    c = Component(1.0, (0.0,), ((1.0,),))
    with pytest.raises(ValueError, match="bad_rate"):
        MixtureSpec((c,), (c,), 1.0)
    with pytest.raises(ValueError, match="weights"):
        MixtureSpec((Component(0.5, (0.0,), ((1.0,),)),), (c,), 0.3)
    with pytest.raises(ValueError, match="semi-definite"):
        MixtureSpec((Component(1.0, (0.0, 0.0), ((1.0, 2.0), (2.0, 1.0))),), (c,), 0.3)


def test_mixture_dict_round_trip():
    spec = default_mixture(k=2, covariance_range=0.5, seed=3)
    assert MixtureSpec.from_dict(spec.to_dict()) == spec


@given(st.integers(2, 6), st.floats(0.05, 1.0), st.integers(0, 1000))
def test_random_covariance_is_psd_with_unit_diagonal(k, r, seed):
    cov = random_covariance(k, r, seed)
    assert np.allclose(np.diag(cov), 1.0)
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > -1e-10


class TestMnar:
    def test_zero_rate_is_identity(self):
        dec = np.array([1, 0, 1, 0])
        assert np.array_equal(apply_mnar(dec, np.arange(4.0), MnarSpec((0,), 0.0), 0), dec)

    def test_full_overwrite_accepts_lowest_hidden_values(self):
        dec = np.array([1, 1, 0, 0, 0, 0])
        h = np.array([0.0, 0.0, 5.0, -1.0, 3.0, -2.0])
        out = apply_mnar(dec, h, MnarSpec((0,), 1.0), 0)
        assert out.sum() == 2
        assert out.tolist() == [0, 0, 0, 1, 0, 1]

    @given(st.floats(0.0, 1.0), st.integers(0, 10_000))
    def test_accept_count_is_preserved(self, rate, seed):
        rng = np.random.default_rng(seed)
        dec = (rng.random(50) < 0.3).astype(int)
        dec[:2] = (1, 0)
        dec[2:40] = 0
        out = apply_mnar(dec, rng.normal(size=50), MnarSpec((0,), rate), seed)
        assert out.sum() == dec.sum()

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            MnarSpec((0,), 1.5)
        with pytest.raises(ValueError):
            MnarSpec((0, 0), 0.5)
        with pytest.raises(ValueError):
            MnarSpec((5,), 0.5).visible_dims(3)
