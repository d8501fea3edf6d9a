"""Command line entry point: ``biaslab <mode> --config FILE [--seed N] [--out DIR] [--trials N]``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .basl import BaslConfig, basl_fit, write_history
from .bayes import BayesConfig, bayesian_metric, build_prior, constant_prior, split_validation
from .benchmarks import CorrectionMethod, _weak, banded_weights, weighted_validation
from .data import CsvSchema, DataError, RngSeed, Split, load_csv
from .experiments import (MODES, ConfigError, RunConfig, RunReport, atomic_write, csv_text, emit_report,
                          experiment_evaluation, experiment_training, gap_chart, impact_analysis,
                          load_config, metric_label, profit_chart, trace_chart)
from .learners import FitOptions, load_scorecard, predict_proba, save_scorecard
from .loop import TRACE_COLUMNS, LoopAborted, run_loop, sensitivity_sweep, SWEEP_COLUMNS
from .metrics import MetricUndefined

log = logging.getLogger("biaslab")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are config errors (exit 1), not argparse's default 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="biaslab", description="Sampling-bias experiments for credit scorecards.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--trials", type=int, help="override the number of trials")
    return p


def _simulate(cfg: RunConfig) -> list[Path]:
    correction = next((m for m in cfg.methods if m.name != "ignore"), None)
    traces, trace_rows, rows = [], [], []
    for t in range(cfg.trials):
        res = run_loop(replace(cfg.loop, seed=RngSeed(cfg.seed).child(t)), correction)
        traces.append(res.trace)
        for r in res.trace:
            trace_rows.append({"trial": t, **{c: getattr(r, c) for c in TRACE_COLUMNS}})
        last = res.trace[-1]
        for method in ("biased", "oracle", "corrected"):
            for metric in ("abr", "auc"):
                v = getattr(last, f"{metric}_{method}")
                if not math.isnan(v):
                    rows.append({"trial": t, "kind": "loop", "method": method, "metric": metric,
                                 "estimate": v, "truth": math.nan})
    report = RunReport(rows, cfg.config_hash, cfg.seed, name="simulate")
    charts = {"trace": trace_chart(traces)} if cfg.charts and traces else {}
    return emit_report(report, cfg.output_dir, charts=charts,
                       extra_tables={"trace": (trace_rows, ("trial",) + TRACE_COLUMNS)})


def _sensitivity(cfg: RunConfig) -> list[Path]:
    sw = cfg.sweep
    methods = [CorrectionMethod.from_dict(m) for m in sw["methods"]]
    rows = sensitivity_sweep(sw["axis"], sw["grid"], replace(cfg.loop, seed=RngSeed(cfg.seed)), cfg.trials,
                             methods=methods, strategies=cfg.eval_strategies, metrics=cfg.metrics,
                             bayes=cfg.bayes)
    report_rows = [{"trial": r["trial"], "kind": r["kind"], "method": f"{r['method']}@{r['value']:g}",
                    "metric": r["metric"], "estimate": r["estimate"], "truth": r["truth"]}
                   for r in rows if r["kind"] != "failed"]
    report = RunReport(report_rows, cfg.config_hash, cfg.seed, name=f"sensitivity-{sw['axis']}")
    charts = {"gap": gap_chart(rows, sw["axis"])} if cfg.charts else {}
    return emit_report(report, cfg.output_dir, charts=charts,
                       extra_tables={"sweep": (rows, SWEEP_COLUMNS)})


def _impact(cfg: RunConfig) -> list[Path]:
    report, profit, policy = impact_analysis(cfg)
    charts = {"profit": profit_chart(profit)} if cfg.charts else {}
    pcols = ("lgd", "strategy", "rate", "est_profit", "realized_profit", "tie") + tuple(
        f"incr_vs_{s}" for s in cfg.eval_strategies)
    return emit_report(report, cfg.output_dir, charts=charts, extra_tables={
        "profit": (profit, ("lgd", "method", "profit", "incremental", "margin")),
        "policy": (policy, pcols)})


def _real_data(cfg: RunConfig, key: str):
    schema = CsvSchema.from_mapping(cfg.data.get("schema", {}))
    if key == "holdout":
        # a holdout is fully labelled; its accept column is optional
        with open(cfg.data[key], newline="", encoding="utf-8") as fh:
            header = [h.strip() for h in next(csv.reader(fh), [])]
        schema = replace(schema, holdout=True,
                         accepted=schema.accepted if schema.accepted in header else None)
    return load_csv(cfg.data[key], schema)


def _basl_train(cfg: RunConfig) -> list[Path]:
    basl_cfg = next((m.params["config"] for m in cfg.methods if m.name == "basl"), BaslConfig())
    basl_cfg = replace(basl_cfg, seed=RngSeed(cfg.seed).child(1))
    opts = FitOptions(gbt=cfg.learner, seed=RngSeed(cfg.seed).child(2))
    if cfg.data:
        train = _real_data(cfg, "train")
        validation = _real_data(cfg, "validation")
        accepts, rejects = train.accepts(), train.rejects()
        holdout = _real_data(cfg, "holdout") if "holdout" in cfg.data else None
        prior_model = _weak(accepts, RngSeed(cfg.seed).child(3))
    else:
        res = run_loop(replace(cfg.loop, seed=RngSeed(cfg.seed)))
        sp = res.split
        accepts, rejects, validation, holdout = sp.train_accepts, sp.rejects, sp.validation, sp.holdout
        prior_model = res.scorecard
    _, val_rej = split_validation(validation)
    prior = build_prior(val_rej, prior_model)
    result = basl_fit(accepts, rejects, validation, prior, basl_cfg, opts)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"basl-train-{cfg.config_hash}"
    model_p = out / f"{stem}-scorecard.json"
    save_scorecard(result.scorecard, model_p)
    hist_p = out / f"{stem}-history.csv"
    write_history(result.history, hist_p)
    rows = []
    if holdout is not None and holdout.has_labels:
        s = predict_proba(result.scorecard, holdout)
        for spec in cfg.metrics:
            try:
                v = float(spec.compute(s, holdout.labels).value)
            except MetricUndefined:
                v = math.nan
            rows.append({"trial": 0, "kind": "training", "method": "basl", "metric": metric_label(spec),
                         "estimate": v, "truth": math.nan})
    return [model_p, hist_p] + emit_report(RunReport(rows, cfg.config_hash, cfg.seed, name="basl-train"),
                                           out)


def _evaluate(cfg: RunConfig) -> list[Path]:
    validation = _real_data(cfg, "validation")
    f = load_scorecard(cfg.data["scorecard"])
    val_acc, val_rej = split_validation(validation)
    prior_cfg = cfg.data.get("prior", {"source": "weak"})
    src = prior_cfg.get("source", "weak")
    if src == "scorecard":
        prior = build_prior(val_rej, load_scorecard(prior_cfg["path"]))
    elif src == "constant":
        prior = constant_prior(val_rej, float(prior_cfg["rate"]))
    elif src == "weak":
        prior = build_prior(val_rej, _weak(val_acc, RngSeed(cfg.seed).child(1)))
    else:
        raise ConfigError(f"data.prior.source: unknown source {src!r}")
    holdout = _real_data(cfg, "holdout") if "holdout" in cfg.data else None
    weights = None
    if "reweighted" in cfg.eval_strategies:
        weights = (banded_weights(val_acc, val_rej, weak=_weak(val_acc, RngSeed(cfg.seed).child(1)))
                   if val_rej.n else np.ones(val_acc.n))
    rows = []
    s_acc = predict_proba(f, val_acc)
    for mi, spec in enumerate(cfg.metrics):
        truth = math.nan
        if holdout is not None and holdout.has_labels:
            truth = float(spec.compute(predict_proba(f, holdout), holdout.labels).value)
        for strat in cfg.eval_strategies:
            try:
                if strat == "accepts_only":
                    v = float(spec.compute(s_acc, val_acc.labels).value)
                elif strat == "reweighted":
                    v = float(weighted_validation(f, val_acc, weights, spec).value)
                else:
                    b = replace(cfg.bayes, seed=RngSeed(cfg.seed).child(10 + mi))
                    v = float(bayesian_metric(f, val_acc, val_rej, prior, spec, b).value)
            except MetricUndefined:
                v = math.nan
            rows.append({"trial": 0, "kind": "evaluation", "method": strat, "metric": metric_label(spec),
                         "estimate": v, "truth": truth})
    return emit_report(RunReport(rows, cfg.config_hash, cfg.seed, name="evaluate"), cfg.output_dir)


def run(cfg: RunConfig) -> list[Path]:
    if cfg.mode == "simulate":
        return _simulate(cfg)
    if cfg.mode == "experiment1":
        rep = experiment_evaluation(cfg)
        return emit_report(rep, cfg.output_dir)
    if cfg.mode == "experiment2":
        rep = experiment_training(cfg)
        return emit_report(rep, cfg.output_dir)
    if cfg.mode == "sensitivity":
        return _sensitivity(cfg)
    if cfg.mode == "impact":
        return _impact(cfg)
    if cfg.mode == "basl-train":
        return _basl_train(cfg)
    return _evaluate(cfg)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BIASLAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.trials is not None and args.trials < 1:
            raise ConfigError("trials: must be >= 1")
        cfg = load_config(args.config, mode=args.mode, seed=args.seed, output_dir=args.out, trials=args.trials)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoopAborted, DataError, MetricUndefined, OSError, ValueError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
