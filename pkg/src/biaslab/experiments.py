"""Experiment orchestration: evaluation strategies, training methods, loan economics and reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .basl import BaslConfig
from .bayes import BayesConfig, bayesian_metric, build_prior, corrupt_prior, split_validation
from .benchmarks import CorrectionMethod, _weak, banded_weights, train_corrected, weighted_validation
from .data import Dataset, RngSeed, Split, as_seed
from .learners import FitOptions, GbtParams, Scorecard, fit_gbt, predict_proba
from .loop import LoopConfig, LoopResult, fit_oracle, run_loop
from .metrics import MetricSpec, MetricUndefined
from .svg import line_chart

log = logging.getLogger(__name__)

MODES = ("simulate", "experiment1", "experiment2", "sensitivity", "impact", "basl-train", "evaluate")
STRATEGIES = ("accepts_only", "reweighted", "bayesian")
REPORT_COLUMNS = ("trial", "kind", "method", "metric", "estimate", "truth")
AGGREGATE_COLUMNS = ("kind", "method", "metric", "n", "mean", "se", "mean_truth", "bias", "rmse", "avg_rank")
ORACLE = "oracle"


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


def metric_label(spec: MetricSpec) -> str:
    default = MetricSpec(spec.name)
    if spec.window == default.window and spec.step == default.step:
        return spec.name
    lo, hi = spec.window
    return f"{spec.name}[{lo:g},{hi:g}]"


def _orientation(label: str) -> str:
    return MetricSpec(label.split("[")[0]).orientation


# ---------------------------------------------------------------------------
# loan economics


@dataclass(frozen=True)
class LoanEconomics:
    principal_mean: float = 375.0
    principal_sd: float = 75.0
    interest_mean: float = 0.1733
    interest_sd: float = 0.03
    lgd_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(21))
    acceptance_grid: tuple[float, ...] = tuple(round(0.1 + 0.05 * i, 2) for i in range(9))
    n_draws: int = 10000
    population_size: int = 1000

    def __post_init__(self):
        for name in ("lgd_grid", "acceptance_grid"):
            g = tuple(float(v) for v in getattr(self, name))
            if not g or any(not 0.0 <= v <= 1.0 for v in g):
                raise ValueError(f"{name} must be a nonempty subset of [0, 1]")
            object.__setattr__(self, name, g)
        if self.n_draws < 1 or self.population_size < 1:
            raise ValueError("n_draws and population_size must be >= 1")
        if self.principal_mean <= 0 or self.principal_sd < 0 or self.interest_sd < 0:
            raise ValueError("principal mean must be > 0 and sds >= 0")
        if self.interest_mean < 0 and self.interest_sd == 0:
            raise ValueError("interest_mean must be >= 0 when interest_sd is 0")

    @classmethod
    def from_dict(cls, d) -> "LoanEconomics":
        return cls(**dict(d))


def _truncated_normal(rng, mean, sd, n):
    out = rng.normal(mean, sd, n)
    bad = out < 0
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = out < 0
    return out


def draw_loans(econ: LoanEconomics, seed: "RngSeed | int" = 0) -> tuple[np.ndarray, np.ndarray]:
    """Principal and interest draws from Gaussians truncated to non-negative values."""
    rng = as_seed(seed).generator()
    A = _truncated_normal(rng, econ.principal_mean, econ.principal_sd, econ.n_draws)
    i = _truncated_normal(rng, econ.interest_mean, econ.interest_sd, econ.n_draws)
    return A, i


def loan_profit(pd, principal, interest, lgd: float) -> np.ndarray:
    """Average profit per loan over the PD vector; broadcasts over (principal, interest) draws."""
    pd = np.atleast_1d(np.asarray(pd, dtype=float))
    if np.any((pd < 0) | (pd > 1)):
        raise ValueError("PD estimates must lie in [0, 1]")
    A = np.asarray(principal, dtype=float)[..., None]
    r = 1.0 + np.asarray(interest, dtype=float)[..., None]
    terms = pd * A * r * (1.0 - lgd) + (1.0 - pd) * A * r - A
    return terms.mean(axis=-1)


def business_impact(abr_estimates: Mapping[str, Sequence[float]], econ: LoanEconomics | None = None,
                    seed: "RngSeed | int" = 0, *, baseline: str = "ignore") -> list[dict]:
    """Expected profit per loan for each method and LGD; incremental profit and
    margin are relative to ``baseline``."""
    econ = econ or LoanEconomics()
    if baseline not in abr_estimates:
        raise ValueError(f"baseline {baseline!r} missing from estimates")
    A, i = draw_loans(econ, seed)
    rows = []
    for lgd in econ.lgd_grid:
        prof = {m: float(loan_profit(v, A, i, lgd).mean()) for m, v in abr_estimates.items()}
        for m, p in prof.items():
            inc = p - prof[baseline]
            rows.append({"lgd": lgd, "method": m, "profit": p, "incremental": inc,
                         "margin": inc / econ.principal_mean})
    return rows


def policy_selection(abr_by_rate: Mapping[str, Sequence[float]], econ: LoanEconomics | None = None,
                     truth_abr_by_rate: Sequence[float] | None = None, seed: "RngSeed | int" = 0) -> list[dict]:
    """Profit-maximising acceptance rate per strategy and LGD.

    Profit at rate a is a * N * (expected per-loan profit at PD = ABR(a)).
    Ties go to the lower rate. Realised profit uses the true ABR at the
    chosen rate; ``incr_vs_<s>`` compares with strategy ``s``'s choice.
    """
    econ = econ or LoanEconomics()
    rates = np.asarray(econ.acceptance_grid)
    if truth_abr_by_rate is None:
        raise ValueError("policy selection needs the true ABR by rate")
    truth = np.asarray(truth_abr_by_rate, dtype=float)
    est = {s: np.asarray(v, dtype=float) for s, v in abr_by_rate.items()}
    if truth.shape != rates.shape or any(v.shape != rates.shape for v in est.values()):
        raise ValueError("ABR tables must align with the acceptance grid")
    A, i = draw_loans(econ, seed)
    rows = []
    for lgd in econ.lgd_grid:
        chosen = {}
        for s, v in est.items():
            profit = np.array([a * econ.population_size * loan_profit([p], A, i, lgd).mean()
                               for a, p in zip(rates, np.clip(v, 0, 1))])
            best = profit.max()
            tied = np.flatnonzero(np.isclose(profit, best, rtol=1e-12, atol=0.0))
            k = int(tied[0])
            realized = rates[k] * econ.population_size * loan_profit([truth[k]], A, i, lgd).mean()
            chosen[s] = (k, float(profit[k]), float(realized), len(tied) > 1)
        for s, (k, p, r, tie) in chosen.items():
            row = {"lgd": lgd, "strategy": s, "rate": float(rates[k]), "est_profit": p,
                   "realized_profit": r, "tie": int(tie)}
            for o, (_, _, ro, _) in chosen.items():
                row[f"incr_vs_{o}"] = r - ro
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    mode: str
    loop: LoopConfig = field(default_factory=LoopConfig)
    methods: tuple[CorrectionMethod, ...] = (CorrectionMethod("ignore"), CorrectionMethod("basl"))
    eval_strategies: tuple[str, ...] = STRATEGIES
    metrics: tuple[MetricSpec, ...] = (MetricSpec("abr"), MetricSpec("auc"), MetricSpec("pauc"),
                                       MetricSpec("brier"))
    trials: int = 10
    output_dir: str = "results"
    seed: int = 0
    learner: GbtParams = field(default_factory=lambda: GbtParams(n_trees=100))
    bayes: BayesConfig = field(default_factory=BayesConfig)
    economics: LoanEconomics = field(default_factory=LoanEconomics)
    sweep: dict | None = None
    data: dict | None = None
    workers: int = 1
    charts: bool = True
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def config_hash(self) -> str:
        # where results are written does not change them
        keyed = {k: v for k, v in self.raw.items() if k != "output_dir"}
        text = json.dumps(keyed, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def learner_opts(self, seed: RngSeed) -> FitOptions:
        return FitOptions(gbt=self.learner, seed=seed)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], *, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        raw = json.loads(json.dumps(dict(d)))
        for k, v in (overrides or {}).items():
            if v is not None:
                raw[k] = v
        known = set(cls.__dataclass_fields__) - {"raw"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        mode = raw.get("mode")
        if mode not in MODES:
            raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {mode!r}")
        kw: dict[str, Any] = {"mode": mode, "raw": raw}

        def section(name, fn):
            if name in raw and raw[name] is not None:
                try:
                    kw[name] = fn(raw[name])
                except ConfigError:
                    raise
                except (TypeError, ValueError, KeyError) as exc:
                    raise ConfigError(f"{name}: {exc}") from None

        section("loop", LoopConfig.from_dict)
        section("methods", lambda v: tuple(CorrectionMethod.from_dict(m) for m in v))
        section("eval_strategies", _strategies)
        section("metrics", lambda v: tuple(MetricSpec.from_dict(m) for m in v))
        section("learner", lambda v: GbtParams(**v))
        section("bayes", lambda v: BayesConfig(**{**v, "seed": RngSeed(int(v.get("seed", 0)))}))
        section("economics", LoanEconomics.from_dict)
        section("sweep", _sweep)
        section("data", _data_section)
        for name, typ, ok in (("trials", int, lambda v: v >= 1), ("seed", int, lambda v: v >= 0),
                              ("workers", int, lambda v: v >= 1)):
            if name in raw:
                v = raw[name]
                if not isinstance(v, int) or isinstance(v, bool) or not ok(v):
                    raise ConfigError(f"{name}: expected a valid {typ.__name__}, got {v!r}")
                kw[name] = v
        if "output_dir" in raw:
            if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
                raise ConfigError("output_dir: expected a nonempty path")
            kw["output_dir"] = raw["output_dir"]
        if "charts" in raw:
            kw["charts"] = bool(raw["charts"])
        cfg = cls(**kw)
        cfg._check_mode()
        return cfg

    def _check_mode(self):
        if self.mode == "sensitivity" and self.sweep is None:
            raise ConfigError("sweep: required for mode 'sensitivity'")
        if self.mode == "evaluate":
            if not self.data or "validation" not in self.data or "scorecard" not in self.data:
                raise ConfigError("data: mode 'evaluate' needs data.validation and data.scorecard")
        if self.mode == "basl-train" and self.data and not {"train", "validation"} <= set(self.data):
            raise ConfigError("data: mode 'basl-train' with real data needs data.train and data.validation")
        if self.mode in ("experiment2", "impact") and not self.methods:
            raise ConfigError("methods: at least one method is required")
        if self.mode == "impact" and "ignore" not in [m.name for m in self.methods]:
            raise ConfigError("methods: mode 'impact' needs 'ignore' as the baseline")


def _strategies(v):
    out = tuple(v)
    bad = [s for s in out if s not in STRATEGIES]
    if bad or not out:
        raise ConfigError(f"eval_strategies: unknown strategy {bad[0] if bad else '(empty)'}")
    return out


def _sweep(v):
    from .loop import SWEEP_AXES
    if v.get("axis") not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: expected one of {', '.join(SWEEP_AXES)}")
    grid = v.get("grid")
    if not grid:
        raise ConfigError("sweep.grid: must be a nonempty list")
    return {"axis": v["axis"], "grid": [float(g) for g in grid],
            "methods": list(v.get("methods", ["basl"]))}


def _data_section(v):
    if not isinstance(v, dict):
        raise ConfigError("data: expected an object")
    return dict(v)


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig.from_dict(raw, overrides=overrides)


# ---------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    """Raw per-trial rows plus provenance; aggregates are derived on demand."""

    rows: list[dict]
    config_hash: str = ""
    seed: int = 0
    version: str = __version__
    name: str = "report"

    def aggregates(self) -> list[dict]:
        return aggregate_rows(self.rows)

    def values(self, kind: str, method: str, metric: str, field_: str = "estimate") -> np.ndarray:
        return np.array([r[field_] for r in self.rows
                         if r["kind"] == kind and r["method"] == method and r["metric"] == metric], dtype=float)


def _ranks(rows: list[dict]) -> dict[tuple, list[float]]:
    """Midranks per (trial, metric) among non-oracle methods; rank 1 is best."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r["method"] == ORACLE or not math.isfinite(r["estimate"]):
            continue
        groups.setdefault((r["kind"], r["trial"], r["metric"]), []).append(r)
    out: dict[tuple, list[float]] = {}
    for (kind, _trial, metric), g in groups.items():
        if kind == "evaluation":
            key = np.array([abs(r["estimate"] - r["truth"]) for r in g])
        else:
            key = np.array([r["estimate"] for r in g])
            if _orientation(metric) == "higher_better":
                key = -key
        for r, rk in zip(g, rankdata(key, method="average")):
            out.setdefault((kind, r["method"], metric), []).append(float(rk))
            out.setdefault((kind, r["method"], "all"), []).append(float(rk))
    return out


def aggregate_rows(rows: list[dict]) -> list[dict]:
    ranks = _ranks(rows)
    keys: list[tuple] = []
    for r in rows:
        k = (r["kind"], r["method"], r["metric"])
        if k not in keys:
            keys.append(k)
    out = []
    for kind, method, metric in keys:
        sel = [r for r in rows if (r["kind"], r["method"], r["metric"]) == (kind, method, metric)
               and math.isfinite(r["estimate"])]
        est = np.array([r["estimate"] for r in sel], dtype=float)
        tru = np.array([r["truth"] for r in sel], dtype=float)
        n = len(est)
        row = {"kind": kind, "method": method, "metric": metric, "n": n,
               "mean": float(est.mean()) if n else math.nan,
               "se": float(est.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
               "mean_truth": math.nan, "bias": math.nan, "rmse": math.nan, "avg_rank": math.nan}
        if n and np.all(np.isfinite(tru)):
            row["mean_truth"] = float(tru.mean())
            row["bias"] = float((est - tru).mean())
            row["rmse"] = float(np.sqrt(np.mean((est - tru) ** 2)))
        rk = ranks.get((kind, method, metric))
        if rk:
            row["avg_rank"] = float(np.mean(rk))
        out.append(row)
    for kind, method in dict.fromkeys((k[0], k[1]) for k in keys):
        rk = ranks.get((kind, method, "all"))
        if rk:
            out.append({"kind": kind, "method": method, "metric": "all", "n": len(rk), "mean": math.nan,
                        "se": math.nan, "mean_truth": math.nan, "bias": math.nan, "rmse": math.nan,
                        "avg_rank": float(np.mean(rk))})
    return out


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _parse_cell(s: str):
    if s == "":
        return math.nan
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def csv_text(rows: Sequence[Mapping], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, math.nan)) for c in columns])
    return buf.getvalue()


def atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse_cell(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _prepare_dir(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def emit_report(report: RunReport, out_dir, *, charts: Mapping[str, str] | None = None,
                extra_tables: Mapping[str, tuple[Sequence[Mapping], Sequence[str]]] | None = None) -> list[Path]:
    """Write raw and aggregate CSVs (plus optional tables and SVG charts).

    File names embed the config hash. With no rows, only header CSVs are
    written and charts are skipped.
    """
    out = _prepare_dir(out_dir)
    stem = f"{report.name}-{report.config_hash}" if report.config_hash else report.name
    paths = []
    raw_p = out / f"{stem}-raw.csv"
    atomic_write(raw_p, csv_text(report.rows, REPORT_COLUMNS))
    agg_p = out / f"{stem}-aggregate.csv"
    atomic_write(agg_p, csv_text(report.aggregates(), AGGREGATE_COLUMNS))
    paths += [raw_p, agg_p]
    for name, (rows, cols) in (extra_tables or {}).items():
        p = out / f"{stem}-{name}.csv"
        atomic_write(p, csv_text(rows, cols))
        paths.append(p)
    meta = {"config_hash": report.config_hash, "seed": report.seed, "version": report.version,
            "rank_averaging": "midranks per (trial, metric); averaged over trials, and over metrics for 'all'"}
    meta_p = out / f"{stem}-meta.json"
    atomic_write(meta_p, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    paths.append(meta_p)
    if not report.rows:
        warnings.warn("report has no rows; wrote header-only CSVs", RuntimeWarning, stacklevel=2)
        return paths
    for name, svg in (charts or {}).items():
        p = out / f"{stem}-{name}.svg"
        atomic_write(p, svg)
        paths.append(p)
    return paths


def load_report(raw_path, aggregate_path, *, tol: float = 1e-12) -> RunReport:
    """Read a report back and check that the stored aggregates match the raw rows."""
    rows = read_csv_rows(raw_path)
    for r in rows:
        for c in ("estimate", "truth"):
            r[c] = float(r[c]) if r[c] != "" else math.nan
        r["method"], r["metric"], r["kind"] = str(r["method"]), str(r["metric"]), str(r["kind"])
    stored = read_csv_rows(aggregate_path)
    fresh = aggregate_rows(rows)
    if len(stored) != len(fresh):
        raise ValueError("aggregate table does not match the raw rows")
    for s, f in zip(stored, fresh):
        for c in ("mean", "se", "mean_truth", "bias", "rmse", "avg_rank"):
            a, b = float(s[c]), float(f[c])
            if not (math.isnan(a) and math.isnan(b)) and not abs(a - b) <= tol * max(1.0, abs(b)):
                raise ValueError(f"aggregate {c} for {s['method']}/{s['metric']} differs from raw rows")
    return RunReport(rows)


# ---------------------------------------------------------------------------
# trials


def _subsample_rejects(val_acc: Dataset, val_rej: Dataset, share: float, seed: RngSeed) -> Dataset:
    if not 0.0 <= share < 1.0:
        raise ValueError("validation_mix must lie in [0, 1)")
    want = int(round(share / (1.0 - share) * val_acc.n))
    if want >= val_rej.n:
        return val_rej
    idx = np.sort(seed.generator().choice(val_rej.n, size=want, replace=False))
    return val_rej.take(idx)


def evaluate_strategies(f: Scorecard, split: Split, strategies: Sequence[str], metrics: Sequence[MetricSpec], *,
                        prior_model: Scorecard | None, seed: RngSeed, bayes: BayesConfig | None = None,
                        reject_share: float | None = None, prior_flip: float = 0.0) -> list[dict]:
    """Each strategy's estimate of ``f``'s holdout performance, with the holdout truth.

    The Bayesian prior rescores the validation rejects with ``prior_model``
    (the scorecard that made the accept decisions); without one, a weak
    learner trained on the training accepts is used.
    """
    bayes = bayes or BayesConfig()
    val_acc, val_rej = split_validation(split.validation)
    if reject_share is not None:
        val_rej = _subsample_rejects(val_acc, val_rej, reject_share, seed.child(0))
    s_hold = predict_proba(f, split.holdout)
    y_hold = split.holdout.require_labels()
    prior = None
    if "bayesian" in strategies:
        pm = prior_model or _weak(split.train_accepts, seed.child(1))
        prior = build_prior(val_rej, pm)
        if prior_flip > 0:
            prior = corrupt_prior(prior, prior_flip, seed=seed.child(2))
    weights = None
    if "reweighted" in strategies:
        weak = _weak(split.train_accepts, seed.child(1))
        weights = banded_weights(val_acc, val_rej, weak=weak) if val_rej.n else np.ones(val_acc.n)
    s_acc = predict_proba(f, val_acc)
    y_acc = val_acc.require_labels()
    rows = []
    for mi, spec in enumerate(metrics):
        label = metric_label(spec)
        try:
            truth = float(spec.compute(s_hold, y_hold).value)
        except MetricUndefined:
            truth = math.nan
        for s in strategies:
            try:
                if s == "accepts_only":
                    est = float(spec.compute(s_acc, y_acc).value)
                elif s == "reweighted":
                    est = float(weighted_validation(f, val_acc, weights, spec).value)
                else:
                    bcfg = replace(bayes, seed=seed.child(10 + mi))
                    est = float(bayesian_metric(f, val_acc, val_rej, prior, spec, bcfg).value)
            except MetricUndefined as exc:
                log.warning("strategy %s undefined for %s: %s", s, label, exc)
                est = math.nan
            rows.append({"method": s, "metric": label, "estimate": est, "truth": truth})
    return rows


def evaluation_trial(res: LoopResult, strategies=STRATEGIES, metrics=(MetricSpec("abr"),), *,
                     seed: RngSeed, bayes: BayesConfig | None = None, learner: GbtParams | None = None,
                     reject_share: float | None = None, prior_flip: float = 0.0) -> list[dict]:
    """Experiment I on one loop run: train f_a on the train accepts, then estimate its holdout metrics."""
    opts = FitOptions(gbt=learner or GbtParams(n_trees=100), seed=seed.child(0))
    f = fit_gbt(_plain(res.split.train_accepts), opts)
    return evaluate_strategies(f, res.split, strategies, metrics, prior_model=res.scorecard,
                               seed=seed.child(1), bayes=bayes, reject_share=reject_share, prior_flip=prior_flip)


def _plain(d: Dataset) -> Dataset:
    return Dataset(d.features, d.require_labels(), np.ones(d.n, dtype=np.int8), d.ids, d.feature_names)


def train_methods(split: Split, methods: Sequence[CorrectionMethod], metrics: Sequence[MetricSpec], *,
                  seed: RngSeed, learner: GbtParams | None = None, prior_model: Scorecard | None = None,
                  include_oracle: bool = True) -> list[dict]:
    """Experiment II on one split: holdout metrics of each corrected scorecard.

    All methods share the learner seed so trials are paired. A failing
    method is logged and recorded with NaN values.
    """
    opts = FitOptions(gbt=learner or GbtParams(n_trees=100), seed=seed.child(0))
    y_hold = split.holdout.require_labels()
    prior = None
    if prior_model is not None and any(m.name == "basl" for m in methods):
        _, val_rej = split_validation(split.validation)
        prior = build_prior(val_rej, prior_model)
    models: list[tuple[str, Scorecard | None]] = []
    if include_oracle:
        models.append((ORACLE, fit_oracle(split, opts)))
    for m in methods:
        try:
            models.append((m.name, train_corrected(m, split, opts, prior=prior)))
        except (ValueError, MetricUndefined, np.linalg.LinAlgError) as exc:
            warnings.warn(f"method {m.name} failed: {exc}", RuntimeWarning, stacklevel=2)
            models.append((m.name, None))
    rows = []
    for name, model in models:
        s = predict_proba(model, split.holdout) if model is not None else None
        for spec in metrics:
            v = math.nan
            if s is not None:
                try:
                    v = float(spec.compute(s, y_hold).value)
                except MetricUndefined:
                    pass
            rows.append({"method": name, "metric": metric_label(spec), "estimate": v, "truth": math.nan})
    return rows


def training_trial(res: LoopResult, methods=(), metrics=(MetricSpec("abr"),), *, seed: RngSeed,
                   learner: GbtParams | None = None) -> list[dict]:
    methods = [CorrectionMethod.from_dict(m) if not isinstance(m, CorrectionMethod) else m for m in methods]
    if not any(m.name == "ignore" for m in methods):
        methods = [CorrectionMethod("ignore")] + methods
    return train_methods(res.split, methods, metrics, seed=seed, learner=learner, prior_model=res.scorecard)


def _trial_loop(cfg: RunConfig, t: int) -> tuple[RngSeed, LoopResult]:
    seed = RngSeed(cfg.seed).child(t)
    loop_cfg = replace(cfg.loop, seed=seed, track_every=0)
    return seed, run_loop(loop_cfg)


def _map_trials(cfg: RunConfig, fn: Callable[[RunConfig, int], list[dict]]) -> list[dict]:
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            parts = list(ex.map(fn, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        parts = [fn(cfg, t) for t in range(cfg.trials)]
    return [r for part in parts for r in part]


def _exp1_trial(cfg: RunConfig, t: int) -> list[dict]:
    seed, res = _trial_loop(cfg, t)
    rows = evaluation_trial(res, cfg.eval_strategies, cfg.metrics, seed=seed.child(100), bayes=cfg.bayes,
                            learner=cfg.learner)
    return [{"trial": t, "kind": "evaluation", **r} for r in rows]


def _exp2_trial(cfg: RunConfig, t: int) -> list[dict]:
    seed, res = _trial_loop(cfg, t)
    rows = training_trial(res, cfg.methods, cfg.metrics, seed=seed.child(200), learner=cfg.learner)
    return [{"trial": t, "kind": "training", **r} for r in rows]


def experiment_evaluation(cfg: RunConfig) -> RunReport:
    """Experiment I over ``cfg.trials`` loop runs."""
    return RunReport(_map_trials(cfg, _exp1_trial), cfg.config_hash, cfg.seed, name="experiment1")


def experiment_training(cfg: RunConfig) -> RunReport:
    """Experiment II over ``cfg.trials`` loop runs (oracle included as reference)."""
    return RunReport(_map_trials(cfg, _exp2_trial), cfg.config_hash, cfg.seed, name="experiment2")


def _impact_trial(cfg: RunConfig, t: int) -> list[dict]:
    seed, res = _trial_loop(cfg, t)
    rows = training_trial(res, cfg.methods, (MetricSpec("abr"),), seed=seed.child(200), learner=cfg.learner)
    out = [{"trial": t, "kind": "training", **r} for r in rows]
    by_rate = [MetricSpec("abr", (a, a)) for a in cfg.economics.acceptance_grid]
    ev = evaluation_trial(res, cfg.eval_strategies, by_rate, seed=seed.child(100), bayes=cfg.bayes,
                          learner=cfg.learner)
    out += [{"trial": t, "kind": "evaluation", **r} for r in ev]
    return out


def abr_by_rate_table(report_rows: Sequence[Mapping], econ: LoanEconomics) -> tuple[dict, np.ndarray]:
    """Mean estimated ABR per strategy at each acceptance rate, and the mean truth."""
    labels = [metric_label(MetricSpec("abr", (a, a))) for a in econ.acceptance_grid]
    ev = [r for r in report_rows if r["kind"] == "evaluation"]
    strategies = list(dict.fromkeys(r["method"] for r in ev))
    est = {s: np.array([np.nanmean([r["estimate"] for r in ev if r["method"] == s and r["metric"] == lab])
                        for lab in labels]) for s in strategies}
    first = strategies[0]
    truth = np.array([np.nanmean([r["truth"] for r in ev if r["method"] == first and r["metric"] == lab])
                      for lab in labels])
    return est, truth


def impact_analysis(cfg: RunConfig) -> tuple[RunReport, list[dict], list[dict]]:
    """Business impact of each training method and profit-driven policy selection."""
    rows = _map_trials(cfg, _impact_trial)
    report = RunReport(rows, cfg.config_hash, cfg.seed, name="impact")
    abr = {m: [r["estimate"] for r in rows if r["kind"] == "training" and r["method"] == m
               and math.isfinite(r["estimate"])]
           for m in dict.fromkeys(r["method"] for r in rows if r["kind"] == "training")}
    profit = business_impact({m: v for m, v in abr.items() if v}, cfg.economics, RngSeed(cfg.seed).child(9))
    est, truth = abr_by_rate_table(rows, cfg.economics)
    policy = policy_selection(est, cfg.economics, truth, RngSeed(cfg.seed).child(9))
    return report, profit, policy


# ---------------------------------------------------------------------------
# charts


def trace_chart(traces: Sequence[Sequence], title="Holdout ABR over loop iterations") -> str:
    series = {}
    for name in ("abr_biased", "abr_oracle", "abr_corrected"):
        it = [r.iteration for r in traces[0]]
        vals = np.nanmean(np.array([[getattr(r, name) for r in tr] for tr in traces], dtype=float), axis=0) \
            if not all(all(math.isnan(getattr(r, name)) for r in tr) for tr in traces) else None
        if vals is not None:
            series[name.replace("abr_", "")] = (it, vals)
    return line_chart(series, title=title, xlabel="iteration", ylabel="holdout ABR")


def gap_chart(rows: Sequence[Mapping], axis: str) -> str:
    """Mean oracle-to-biased ABR gap and BASL gap against the sweep axis."""
    tr = [r for r in rows if r["kind"] == "training" and r["metric"] == "abr"]
    values = sorted(dict.fromkeys(r["value"] for r in tr))
    series = {}
    for m in dict.fromkeys(r["method"] for r in tr):
        if m == ORACLE:
            continue
        ys = []
        for v in values:
            gaps = []
            for t in dict.fromkeys(r["trial"] for r in tr if r["value"] == v):
                cell = {r["method"]: r["estimate"] for r in tr if r["value"] == v and r["trial"] == t}
                if m in cell and ORACLE in cell:
                    gaps.append(cell[m] - cell[ORACLE])
            ys.append(float(np.nanmean(gaps)) if gaps else math.nan)
        series[m] = (values, ys)
    return line_chart(series, title=f"ABR loss vs oracle across {axis}", xlabel=axis, ylabel="ABR gap")


def profit_chart(profit_rows: Sequence[Mapping]) -> str:
    series = {}
    for m in dict.fromkeys(r["method"] for r in profit_rows):
        sel = [r for r in profit_rows if r["method"] == m]
        series[m] = ([r["lgd"] for r in sel], [r["margin"] for r in sel])
    return line_chart(series, title="Expected margin vs LGD", xlabel="LGD", ylabel="margin over ignore")
