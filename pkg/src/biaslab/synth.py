"""Synthetic applicants from class-conditional Gaussian mixtures, and MNAR overwriting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, RngSeed, as_seed

log = logging.getLogger(__name__)

_JITTER_MAX = 1e-8


@dataclass(frozen=True)
class Component:
    weight: float
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]


def _cholesky(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance matrix is not symmetric")
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
        except np.linalg.LinAlgError:
            jitter = 1e-12 if jitter == 0.0 else jitter * 10
            if jitter > _JITTER_MAX:
                raise ValueError("covariance matrix is not positive semi-definite") from None


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture per class (good, bad) plus the population bad rate."""

    good: tuple[Component, ...]
    bad: tuple[Component, ...]
    bad_rate: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.bad_rate < 1.0:
            raise ValueError("bad_rate must lie in (0, 1)")
        k = None
        for name, comps in (("good", self.good), ("bad", self.bad)):
            if not comps:
                raise ValueError(f"{name} mixture has no components")
            w = np.array([c.weight for c in comps])
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} mixture weights must be >= 0 and sum to 1")
            for c in comps:
                kk = len(c.mean)
                k = kk if k is None else k
                if kk != k or np.shape(c.cov) != (k, k):
                    raise ValueError("inconsistent mixture dimensions")
                _cholesky(np.array(c.cov))

    @property
    def k(self) -> int:
        return len(self.good[0].mean)

    @classmethod
    def simple(cls, mu_good, mu_bad, cov=None, bad_rate=0.3) -> "MixtureSpec":
        k = len(mu_good)
        cov = np.eye(k) if cov is None else np.asarray(cov)
        c = tuple(map(tuple, cov))
        return cls((Component(1.0, tuple(mu_good), c),), (Component(1.0, tuple(mu_bad), c),), bad_rate)

    def to_dict(self) -> dict:
        def comp(c):
            return {"weight": c.weight, "mean": list(c.mean), "cov": [list(r) for r in c.cov]}
        return {"good": [comp(c) for c in self.good], "bad": [comp(c) for c in self.bad],
                "bad_rate": self.bad_rate}

    @classmethod
    def from_dict(cls, d) -> "MixtureSpec":
        def comps(lst):
            return tuple(Component(float(c["weight"]), tuple(map(float, c["mean"])),
                                   tuple(tuple(map(float, r)) for r in c["cov"])) for c in lst)
        return cls(comps(d["good"]), comps(d["bad"]), float(d.get("bad_rate", 0.3)))


def _draw_mixture(comps: Sequence[Component], n: int, rng: np.random.Generator) -> np.ndarray:
    k = len(comps[0].mean)
    w = np.array([c.weight for c in comps])
    which = rng.choice(len(comps), size=n, p=w / w.sum())
    z = rng.standard_normal((n, k))
    out = np.empty((n, k))
    for j, c in enumerate(comps):
        m = which == j
        if m.any():
            L = _cholesky(np.array(c.cov))
            out[m] = np.asarray(c.mean) + z[m] @ L.T
    return out


def sample_applicants(spec: MixtureSpec, n: int, seed: "RngSeed | int", *, id_offset: int = 0) -> Dataset:
    """Draw ``n`` labeled applicants; acceptance flags are left unset."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_seed(seed).generator()
    y = (rng.random(n) < spec.bad_rate).astype(np.int8)
    X = np.empty((n, spec.k))
    nb = int(y.sum())
    X[y == 1] = _draw_mixture(spec.bad, nb, rng)
    X[y == 0] = _draw_mixture(spec.good, n - nb, rng)
    return Dataset(X, y, None, np.arange(id_offset, id_offset + n), holdout=True)


def random_covariance(k: int, range_max: float, seed: "RngSeed | int", *, return_raw: bool = False):
    """Random correlation-like matrix with off-diagonals drawn from U[-range_max, range_max].

    The symmetrised draw is projected onto the PSD cone by clipping
    eigenvalues at 1e-6 and rescaled to unit diagonal.
    """
    if range_max <= 0:
        raise ValueError("range_max must be positive")
    rng = as_seed(seed).generator()
    A = rng.uniform(-range_max, range_max, size=(k, k))
    raw = np.triu(A, 1)
    raw = raw + raw.T + np.eye(k)
    vals, vecs = np.linalg.eigh(raw)
    psd = (vecs * np.maximum(vals, 1e-6)) @ vecs.T
    d = np.sqrt(np.diag(psd))
    out = psd / np.outer(d, d)
    out = (out + out.T) / 2
    np.fill_diagonal(out, 1.0)
    return (out, raw) if return_raw else out


def default_mixture(k: int = 3, *, bad_rate: float = 0.7, separation: float = 0.8, spread: float = 0.5,
                    covariance_range: float | None = None, seed: "RngSeed | int" = 0) -> MixtureSpec:
    """Two equal-weight components per class.

    Good components sit at ``+-spread * e`` and bad ones at
    ``separation * 1 +- spread * e``, where ``e`` is the unit vector with
    alternating signs. Covariances are the identity unless
    ``covariance_range`` is given, in which case every component gets its
    own random covariance.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    s = as_seed(seed)
    e = np.resize([1.0, -1.0], k) / math.sqrt(k)
    shift = np.full(k, float(separation))
    means = {"good": [-spread * e, spread * e], "bad": [shift - spread * e, shift + spread * e]}
    comps = {}
    for cls_i, name in enumerate(("good", "bad")):
        out = []
        for c, mu in enumerate(means[name]):
            if covariance_range is None:
                cov = np.eye(k)
            else:
                cov = random_covariance(k, covariance_range, s.child(10 * cls_i + c))
            out.append(Component(0.5, tuple(float(v) for v in mu), tuple(map(tuple, cov))))
        comps[name] = tuple(out)
    return MixtureSpec(comps["good"], comps["bad"], bad_rate)


@dataclass(frozen=True)
class MnarSpec:
    """Hidden feature columns and the share of accept decisions overwritten per batch."""

    hidden_dims: tuple[int, ...] = ()
    overwrite_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.overwrite_rate <= 1.0:
            raise ValueError("overwrite_rate must lie in [0, 1]")
        if len(set(self.hidden_dims)) != len(self.hidden_dims):
            raise ValueError("duplicate hidden dims")
        if any(d < 0 for d in self.hidden_dims):
            raise ValueError("hidden dims are 0-based column indices")

    def visible_dims(self, k: int) -> np.ndarray:
        if any(d >= k for d in self.hidden_dims):
            raise ValueError("hidden dim out of range")
        return np.array([j for j in range(k) if j not in self.hidden_dims], dtype=int)


def apply_mnar(decisions, hidden_values, mnar: MnarSpec, seed: "RngSeed | int") -> np.ndarray:
    """Overwrite a share of accept decisions using a feature the scorecard never sees.

    ``ceil(overwrite_rate * n_accepted)`` random accepts are flipped to reject
    and the same number of current rejects with the lowest ``hidden_values``
    are accepted in their place.
    """
    dec = np.asarray(decisions).astype(np.int8).copy()
    h = np.asarray(hidden_values, dtype=float)
    if h.ndim == 2:
        h = h[:, 0]
    if h.shape != dec.shape:
        raise ValueError("hidden values must align with decisions")
    if mnar.overwrite_rate == 0.0:
        return dec
    acc = np.flatnonzero(dec == 1)
    rej = np.flatnonzero(dec == 0)
    n_swap = int(math.ceil(mnar.overwrite_rate * len(acc) - 1e-9))
    if n_swap > len(rej):
        log.warning("overwrite count %d exceeds %d rejected rows; clipping", n_swap, len(rej))
        n_swap = len(rej)
    if n_swap == 0:
        return dec
    rng = as_seed(seed).generator()
    leave = rng.choice(acc, size=n_swap, replace=False)
    enter = rej[np.argsort(h[rej], kind="stable")[:n_swap]]
    dec[leave] = 0
    dec[enter] = 1
    return dec
