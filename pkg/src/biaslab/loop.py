"""Acceptance-loop simulator and sensitivity sweeps."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .data import ORACLE_ACCESS, UNKNOWN, Dataset, RngSeed, Split, concat, partition
from .learners import FitOptions, GbtParams, Scorecard, fit_gbt, predict_proba
from .metrics import MetricSpec, MetricUndefined, mmd
from .synth import MixtureSpec, MnarSpec, apply_mnar, default_mixture, sample_applicants

log = logging.getLogger(__name__)

MAX_EMPTY_BATCHES = 10


class LoopAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class LoopConfig:
    """Acceptance-loop settings.

    Exactly one of ``acceptance_rate`` (accept the lowest-PD share of each
    batch) and ``threshold`` (accept when PD <= threshold) is used; rate mode
    wins when both are set. ``track_every`` controls how often holdout
    metrics are computed (0 = last iteration only).
    """

    mixture: MixtureSpec = field(default_factory=default_mixture)
    mnar: MnarSpec = field(default_factory=MnarSpec)
    batch_size: int = 1000
    iterations: int = 10
    acceptance_rate: float | None = 0.25
    threshold: float | None = None
    retrain_every: int = 1
    holdout_size: int = 5000
    warmup: int = 5
    seed: RngSeed = field(default_factory=lambda: RngSeed(0))
    track_every: int = 1
    validation_fraction: float = 0.3
    gbt: GbtParams = field(default_factory=lambda: GbtParams(n_trees=100))

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 2 or self.holdout_size < 2:
            raise ValueError("batch_size and holdout_size must be >= 2")
        if self.warmup < 1:
            raise ValueError("warmup must be >= 1")
        if self.retrain_every < 1 or self.track_every < 0:
            raise ValueError("retrain_every must be >= 1 and track_every >= 0")
        if self.acceptance_rate is None and self.threshold is None:
            raise ValueError("set acceptance_rate or threshold")
        if self.acceptance_rate is not None and not 0.0 < self.acceptance_rate <= 1.0:
            raise ValueError("acceptance_rate must lie in (0, 1]")
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        self.mnar.visible_dims(self.mixture.k)

    @property
    def rate_mode(self) -> bool:
        return self.acceptance_rate is not None

    @property
    def warmup_rate(self) -> float:
        return self.acceptance_rate if self.acceptance_rate is not None else 0.5

    def to_dict(self) -> dict:
        return {
            "mixture": self.mixture.to_dict(),
            "mnar": {"hidden_dims": list(self.mnar.hidden_dims), "overwrite_rate": self.mnar.overwrite_rate},
            "batch_size": self.batch_size, "iterations": self.iterations,
            "acceptance_rate": self.acceptance_rate, "threshold": self.threshold,
            "retrain_every": self.retrain_every, "holdout_size": self.holdout_size,
            "warmup": self.warmup, "seed": self.seed.seed, "track_every": self.track_every,
            "validation_fraction": self.validation_fraction, "gbt": asdict(self.gbt),
        }

    @classmethod
    def from_dict(cls, d) -> "LoopConfig":
        d = dict(d)
        kw = {}
        mix = d.pop("mixture", None)
        if mix is not None:
            if "good" in mix:
                kw["mixture"] = MixtureSpec.from_dict(mix)
            else:
                mix = dict(mix)
                kw["mixture"] = default_mixture(**mix)
        if "mnar" in d:
            m = dict(d.pop("mnar"))
            kw["mnar"] = MnarSpec(tuple(m.get("hidden_dims", ())), float(m.get("overwrite_rate", 0.0)))
        if "seed" in d:
            kw["seed"] = RngSeed(int(d.pop("seed")))
        if "gbt" in d:
            kw["gbt"] = GbtParams(**d.pop("gbt"))
        return cls(**kw, **d)


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    n_accepted: int
    accept_bad_rate: float
    accepts_total: int
    abr_biased: float = math.nan
    abr_oracle: float = math.nan
    abr_corrected: float = math.nan
    auc_biased: float = math.nan
    auc_oracle: float = math.nan
    auc_corrected: float = math.nan


TRACE_COLUMNS = tuple(IterationStats.__dataclass_fields__)


@dataclass
class LoopResult:
    """Per-iteration trace, final split and the scorecard that made the last decisions."""

    trace: list[IterationStats]
    split: Split
    scorecard: Scorecard
    holdout_full: Dataset = field(repr=False)

    def __iter__(self):
        # allows ``trace, split = run_loop(...)``
        yield self.trace
        yield self.split


def _opts(cfg: LoopConfig, seed: RngSeed) -> FitOptions:
    return FitOptions(gbt=cfg.gbt, seed=seed)


def _labeled(d: Dataset) -> Dataset:
    return Dataset(d.features, d.require_labels(), np.ones(d.n, dtype=np.int8), d.ids, d.feature_names)


def _oracle_sample(acc: Dataset, rej: Dataset) -> Dataset:
    # only this simulator and reports hold the capability
    parts = [_labeled(acc)]
    if rej.n:
        parts.append(Dataset(rej.features, rej.sealed_labels(ORACLE_ACCESS), np.ones(rej.n, dtype=np.int8),
                             rej.ids, rej.feature_names))
    return concat(parts)


def _holdout_metrics(model: Scorecard, holdout: Dataset, specs) -> list[float]:
    s = predict_proba(model, holdout)
    y = holdout.require_labels()
    out = []
    for spec in specs:
        try:
            out.append(float(spec.compute(s, y).value))
        except MetricUndefined:
            out.append(math.nan)
    return out


def fit_oracle(split: Split, opts: FitOptions) -> Scorecard:
    """Scorecard trained on train accepts plus the sealed truth of the train rejects."""
    return fit_gbt(_oracle_sample(split.train_accepts, split.rejects), opts)


def run_loop(cfg: LoopConfig, correction=None) -> LoopResult:
    """Simulate ``cfg.iterations`` batches of applications.

    ``warmup`` batches are accepted at random to bootstrap labels. Each
    following batch is scored by the current scorecard (trained on all labels
    revealed before the batch), accepted by rate or threshold, optionally
    overwritten under MNAR, and the accepts' labels are revealed. Holdout
    metrics of the biased, oracle and corrected scorecards are tracked at the
    scoring model of each tracked iteration.
    """
    root = cfg.seed
    vis = cfg.mnar.visible_dims(cfg.mixture.k)
    hidden = np.array(cfg.mnar.hidden_dims, dtype=int)
    names = tuple(f"x{j + 1}" for j in vis)
    hold_raw = sample_applicants(cfg.mixture, cfg.holdout_size, root.child(0), id_offset=0)
    holdout = Dataset(hold_raw.features[:, vis], hold_raw.labels, None, hold_raw.ids, names, holdout=True)
    specs = (MetricSpec("abr"), MetricSpec("auc"))
    next_id = cfg.holdout_size

    batches: list[Dataset] = []

    def draw(j):
        nonlocal next_id
        raw = sample_applicants(cfg.mixture, cfg.batch_size, root.child(1).child(j), id_offset=next_id)
        next_id += cfg.batch_size
        return raw

    def reveal(raw: Dataset, dec: np.ndarray) -> Dataset:
        y = raw.labels
        return Dataset(raw.features[:, vis], np.where(dec == 1, y, UNKNOWN), dec, raw.ids, names, False, y)

    for w in range(cfg.warmup):
        raw = draw(w)
        rng = root.child(2).child(w).generator()
        n_acc = int(math.floor(cfg.warmup_rate * raw.n + 1e-9))
        dec = np.zeros(raw.n, dtype=np.int8)
        dec[rng.choice(raw.n, size=max(n_acc, 1), replace=False)] = 1
        batches.append(reveal(raw, dec))

    pool = concat(batches)
    if len(np.unique(pool.accepts().labels)) < 2:
        raise LoopAborted("warmup accepts hold a single class; increase warmup or acceptance rate")

    trace: list[IterationStats] = []
    model = None
    empty_run = 0
    last = cfg.iterations
    for j in range(1, cfg.iterations + 1):
        if model is None or (j - 1) % cfg.retrain_every == 0:
            model = fit_gbt(_labeled(pool.accepts()), _opts(cfg, root.child(3).child(j)))
        raw = draw(cfg.warmup + j)
        s = predict_proba(model, raw.features[:, vis])
        if cfg.rate_mode:
            n_acc = int(math.floor(cfg.acceptance_rate * raw.n + 1e-9))
            dec = np.zeros(raw.n, dtype=np.int8)
            dec[np.argsort(s, kind="stable")[:n_acc]] = 1
        else:
            dec = (s <= cfg.threshold).astype(np.int8)
        if len(hidden):
            dec = apply_mnar(dec, raw.features[:, hidden], cfg.mnar, root.child(4).child(j))
        batch = reveal(raw, dec)
        pool = concat([pool, batch])
        n_acc = int(dec.sum())
        if n_acc == 0:
            empty_run += 1
            log.warning("iteration %d accepted no applications", j)
            if empty_run >= MAX_EMPTY_BATCHES:
                raise LoopAborted(f"{MAX_EMPTY_BATCHES} consecutive batches without accepts "
                                  f"(last at iteration {j}); lower the threshold or raise the rate")
        else:
            empty_run = 0
        bad_rate = float(raw.labels[dec == 1].mean()) if n_acc else math.nan
        stats = dict(iteration=j, n_accepted=n_acc, accept_bad_rate=bad_rate,
                     accepts_total=int(pool.accepted.sum()))

        tracked = j == last if cfg.track_every == 0 else (j % cfg.track_every == 0 or j == last)
        if tracked:
            before = pool.take(np.arange(pool.n - raw.n))
            stats["abr_biased"], stats["auc_biased"] = _holdout_metrics(model, holdout, specs)
            oracle = fit_gbt(_oracle_sample(before.accepts(), before.rejects()), _opts(cfg, root.child(5).child(j)))
            stats["abr_oracle"], stats["auc_oracle"] = _holdout_metrics(oracle, holdout, specs)
            if correction is not None:
                from .benchmarks import train_corrected
                sp = partition(before, (1 - cfg.validation_fraction, cfg.validation_fraction),
                               root.child(6).child(j), holdout=holdout)
                fc = train_corrected(correction, sp, _opts(cfg, root.child(7).child(j)))
                stats["abr_corrected"], stats["auc_corrected"] = _holdout_metrics(fc, holdout, specs)
        trace.append(IterationStats(**stats))

    split = partition(pool, (1 - cfg.validation_fraction, cfg.validation_fraction), root.child(8),
                      holdout=holdout)
    return LoopResult(trace, split, model, hold_raw)


def accepts_shift(result: LoopResult, *, max_rows: int = 2000, seed=0) -> float:
    """MMD between every accept revealed by the loop and the holdout."""
    sp = result.split
    acc = concat([sp.train_accepts, sp.validation.accepts()])
    return mmd(acc.features, sp.holdout.features, max_rows=max_rows, seed=seed)


def write_trace(trace: Sequence[IterationStats], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([_cell(getattr(r, c)) for c in TRACE_COLUMNS])


def _cell(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("acceptance_rate", "covariance_range", "bad_rate", "overwrite_rate",
              "validation_mix", "prior_corruption")
TRAINING_AXES = ("acceptance_rate", "covariance_range", "bad_rate", "overwrite_rate")
SWEEP_COLUMNS = ("axis", "value", "trial", "kind", "method", "metric", "estimate", "truth", "status")


def with_axis(base: LoopConfig, axis: str, value: float) -> LoopConfig:
    """Loop config with one sweep axis set (evaluation axes leave the loop untouched)."""
    if axis == "acceptance_rate":
        return replace(base, acceptance_rate=float(value), threshold=None)
    if axis == "overwrite_rate":
        hidden = base.mnar.hidden_dims or (base.mixture.k - 1,)
        return replace(base, mnar=MnarSpec(hidden, float(value)))
    if axis == "bad_rate":
        return replace(base, mixture=replace(base.mixture, bad_rate=float(value)))
    if axis == "covariance_range":
        mix = default_mixture(base.mixture.k, bad_rate=base.mixture.bad_rate,
                              covariance_range=float(value), seed=base.seed)
        return replace(base, mixture=mix)
    if axis in ("validation_mix", "prior_corruption"):
        return base
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def sensitivity_sweep(axis: str, grid: Iterable[float], base: LoopConfig, trials: int, *,
                      methods=(), strategies=("accepts_only", "bayesian"),
                      metrics: Sequence[MetricSpec] = (MetricSpec("abr"),), bayes=None,
                      on_row=None) -> list[dict]:
    """Long-format table over ``grid`` x trials.

    For every cell the loop is run once; training rows compare the oracle,
    the biased (``ignore``) scorecard and ``methods`` on the holdout, and
    evaluation rows record each strategy's estimate of the biased scorecard's
    holdout metric. Cells that fail are recorded with status ``failed`` and
    the sweep continues.
    """
    from .experiments import evaluation_trial, training_trial

    grid = list(grid)
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if not grid:
        raise ValueError("grid must be nonempty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows: list[dict] = []
    for gi, value in enumerate(grid):
        for t in range(trials):
            seed = base.seed.child(1000 + t)
            try:
                cfg = replace(with_axis(base, axis, value), seed=seed, track_every=0)
                res = run_loop(cfg)
                mix = value if axis == "validation_mix" else None
                flip = value if axis == "prior_corruption" else 0.0
                cell = []
                for r in training_trial(res, methods, metrics, seed=seed.child(1)):
                    cell.append({"kind": "training", **r})
                for r in evaluation_trial(res, strategies, metrics, seed=seed.child(2), bayes=bayes,
                                          reject_share=mix, prior_flip=flip):
                    cell.append({"kind": "evaluation", **r})
            except (LoopAborted, MetricUndefined, ValueError, np.linalg.LinAlgError) as exc:
                log.warning("sweep cell %s=%s trial %d failed: %s", axis, value, t, exc)
                cell = [{"kind": "failed", "method": "", "metric": "", "estimate": math.nan,
                         "truth": math.nan, "status": f"failed: {exc}"}]
            for r in cell:
                row = {"axis": axis, "value": float(value), "trial": t, "status": "ok"}
                row.update({k: r[k] for k in ("kind", "method", "metric", "estimate", "truth") if k in r})
                row.setdefault("truth", math.nan)
                if "status" in r:
                    row["status"] = r["status"]
                rows.append(row)
                if on_row:
                    on_row(row)
    return rows
