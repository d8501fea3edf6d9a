from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from ..data import Dataset, RngSeed

SCORECARD_FORMAT = "biaslab-scorecard"
SCORECARD_VERSION = 1


class LearnerError(ValueError):
    pass


@dataclass(frozen=True)
class GbtParams:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    subsample: float = 0.8
    reg_lambda: float = 1.0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 1:
            raise ValueError("n_trees must be >= 0 and max_depth >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")
        if self.min_child_weight < 0 or self.reg_lambda < 0:
            raise ValueError("min_child_weight and reg_lambda must be >= 0")


@dataclass(frozen=True)
class FitOptions:
    l1_lambda: float = 1e-3
    gbt: GbtParams = field(default_factory=GbtParams)
    sample_weights: np.ndarray | None = None
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))
    max_iter: int = 5000
    tol: float = 1e-10

    def __post_init__(self):
        if self.l1_lambda < 0:
            raise ValueError("l1_lambda must be >= 0")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")
        if self.sample_weights is not None:
            w = np.asarray(self.sample_weights, dtype=float)
            if not (np.all(np.isfinite(w)) and np.all(w > 0)):
                raise ValueError("sample weights must be finite and > 0")

    def replace(self, **kw) -> "FitOptions":
        from dataclasses import replace
        return replace(self, **kw)


def normalized_weights(opts: FitOptions, n: int) -> np.ndarray:
    """Sample weights rescaled to mean one (every learner is weight-scale invariant)."""
    if opts.sample_weights is None:
        return np.ones(n)
    w = np.asarray(opts.sample_weights, dtype=float)
    if w.shape != (n,):
        raise LearnerError("sample_weights do not align with the training rows")
    return w / w.mean()


def binary_target(d: Dataset) -> np.ndarray:
    y = d.require_labels().astype(float)
    if y.min() == y.max():
        raise LearnerError("training labels contain a single class")
    return y


@dataclass(frozen=True, eq=False)
class Scorecard:
    """A fitted PD model. ``params`` holds plain arrays/scalars only."""

    kind: str
    params: dict
    feature_arity: int
    training_meta: dict = field(default_factory=dict)

    def predict_proba(self, d: "Dataset | np.ndarray") -> np.ndarray:
        return predict_proba(self, d)


_PREDICTORS: dict[str, Callable[[Scorecard, np.ndarray], np.ndarray]] = {}


def register(kind: str):
    def deco(fn):
        _PREDICTORS[kind] = fn
        return fn
    return deco


def features_of(d: "Dataset | np.ndarray") -> np.ndarray:
    X = d.features if isinstance(d, Dataset) else np.asarray(d, dtype=float)
    return X.reshape(-1, 1) if X.ndim == 1 else X


def predict_proba(m: Scorecard, d: "Dataset | np.ndarray") -> np.ndarray:
    X = features_of(d)
    if X.shape[1] != m.feature_arity:
        raise LearnerError(f"feature arity mismatch: model expects {m.feature_arity}, got {X.shape[1]}")
    p = _PREDICTORS[m.kind](m, X)
    return np.clip(p, 0.0, 1.0)


def constant_scorecard(rate: float, k: int) -> Scorecard:
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    return Scorecard("constant", {"rate": float(rate)}, k)


@register("constant")
def _predict_constant(m, X):
    return np.full(len(X), m.params["rate"])


def logit(p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return np.log(p) - np.log1p(-p)


# ---------------------------------------------------------------------------
# serialization


def _encode(v: Any):
    if isinstance(v, np.ndarray):
        return {"__ndarray__": v.tolist(), "dtype": str(v.dtype)}
    if isinstance(v, dict):
        return {k: _encode(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_encode(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def _decode(v: Any):
    if isinstance(v, dict):
        if "__ndarray__" in v:
            return np.asarray(v["__ndarray__"], dtype=v["dtype"])
        return {k: _decode(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_decode(x) for x in v]
    return v


def scorecard_to_json(m: Scorecard) -> str:
    doc = {"format": SCORECARD_FORMAT, "version": SCORECARD_VERSION, "kind": m.kind,
           "feature_arity": m.feature_arity, "params": _encode(m.params),
           "training_meta": _encode(m.training_meta)}
    return json.dumps(doc, sort_keys=True)


def scorecard_from_json(text: str) -> Scorecard:
    doc = json.loads(text)
    if doc.get("format") != SCORECARD_FORMAT:
        raise LearnerError("not a serialized scorecard")
    if doc.get("version") != SCORECARD_VERSION:
        raise LearnerError(f"unsupported scorecard version {doc.get('version')}")
    if doc["kind"] not in _PREDICTORS:
        raise LearnerError(f"unknown scorecard kind {doc['kind']!r}")
    return Scorecard(doc["kind"], _decode(doc["params"]), int(doc["feature_arity"]),
                     _decode(doc.get("training_meta", {})))


def save_scorecard(m: Scorecard, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scorecard_to_json(m))


def load_scorecard(path) -> Scorecard:
    with open(path, encoding="utf-8") as fh:
        return scorecard_from_json(fh.read())
