import json
import math

import numpy as np
import pytest

from biaslab.data import RngSeed
from biaslab.experiments import (ConfigError, LoanEconomics, MetricSpec, RunConfig, RunReport, aggregate_rows,
                                 business_impact, emit_report, experiment_evaluation, experiment_training,
                                 impact_analysis, load_config, load_report, loan_profit, metric_label,
                                 policy_selection)
from oracles import loan_profit_scalar

FIXED = LoanEconomics(principal_mean=100.0, principal_sd=0.0, interest_mean=0.2, interest_sd=0.0, n_draws=5)

TINY_LOOP = {"batch_size": 200, "iterations": 2, "warmup": 2, "holdout_size": 400, "gbt": {"n_trees": 10}}


def _tiny(mode, **kw):
    d = {"mode": mode, "loop": TINY_LOOP, "trials": 2, "learner": {"n_trees": 10}, "bayes": {"j_max": 30},
         "metrics": [{"name": "abr"}, {"name": "auc"}]}
    d.update(kw)
    return RunConfig.from_dict(d)


class TestLoanProfit:
    @pytest.mark.parametrize("pd,lgd,expected", [(0.0, 0.4, 100 * 0.2), (1.0, 1.0, -100.0), (0.5, 0.5, -10.0)])
    def test_hand_cases(self, pd, lgd, expected):
        assert abs(loan_profit([pd], 100.0, 0.2, lgd)[()] - expected) <= 1e-9
        assert abs(loan_profit_scalar(pd, 100.0, 0.2, lgd) - expected) <= 1e-9

    @pytest.mark.parametrize("pd,lgd", [(0.0, 0.4), (1.0, 1.0), (0.5, 0.5)])
    def test_business_impact_reproduces_hand_cases(self, pd, lgd):
        econ = LoanEconomics(**{**FIXED.__dict__, "lgd_grid": (lgd,)})
        rows = business_impact({"ignore": [pd]}, econ)
        assert abs(rows[0]["profit"] - loan_profit_scalar(pd, 100.0, 0.2, lgd)) <= 1e-9
        assert rows[0]["incremental"] == 0.0

    @pytest.mark.parametrize("lgd", [0.0, 0.3, 1.0])
    def test_pd_slope(self, lgd):
        A, i, h = 250.0, 0.17, 1e-3
        slope = (loan_profit([0.3 + h], A, i, lgd)[()] - loan_profit([0.3 - h], A, i, lgd)[()]) / (2 * h)
        assert abs(slope - (-A * (1 + i) * lgd)) <= 1e-9

    def test_averages_over_draws_and_pds(self):
        A, i = np.array([100.0, 200.0]), np.array([0.1, 0.3])
        got = loan_profit([0.1, 0.4], A, i, 0.5)
        for k in range(2):
            ref = np.mean([loan_profit_scalar(p, A[k], i[k], 0.5) for p in (0.1, 0.4)])
            assert abs(got[k] - ref) <= 1e-9

    def test_pd_range(self):
        with pytest.raises(ValueError):
            loan_profit([1.2], 100.0, 0.1, 0.5)

    def test_business_impact_margins(self):
        rows = business_impact({"ignore": [0.2], "basl": [0.1]}, FIXED)
        basl = [r for r in rows if r["method"] == "basl"]
        assert all(r["incremental"] >= 0 for r in basl)
        r = basl[-1]
        assert r["margin"] == pytest.approx(r["incremental"] / 100.0)
        with pytest.raises(ValueError, match="baseline"):
            business_impact({"basl": [0.1]}, FIXED)


class TestPolicy:
    ECON = LoanEconomics(principal_mean=100.0, principal_sd=0.0, interest_mean=0.2, interest_sd=0.0,
                         n_draws=3, lgd_grid=(0.05, 1.0), acceptance_grid=(0.1, 0.5, 0.9))

    def test_low_lgd_picks_max_rate_and_high_lgd_min_rate(self):
        abr = [0.05, 0.15, 0.3]
        rows = policy_selection({"s": abr}, self.ECON, abr)
        assert {r["lgd"]: r["rate"] for r in rows} == {0.05: 0.9, 1.0: 0.1}

    def test_realized_profit_uses_truth(self):
        rows = policy_selection({"s": [0.0, 0.0, 0.0]}, self.ECON, [0.05, 0.15, 0.3])
        low = [r for r in rows if r["lgd"] == 1.0][0]
        assert low["rate"] == 0.9
        expected = 0.9 * 1000 * loan_profit_scalar(0.3, 100.0, 0.2, 1.0)
        assert low["realized_profit"] == pytest.approx(expected, abs=1e-9)
        assert low["incr_vs_s"] == 0.0

    def test_ties_go_to_the_lower_rate(self):
        econ = LoanEconomics(principal_mean=100.0, principal_sd=0.0, interest_mean=0.0, interest_sd=0.0,
                             n_draws=1, lgd_grid=(0.5,), acceptance_grid=(0.1, 0.5))
        rows = policy_selection({"s": [0.0, 0.0]}, econ, [0.0, 0.0])
        assert rows[0]["rate"] == 0.1 and rows[0]["tie"] == 1

    def test_errors(self):
        with pytest.raises(ValueError, match="true ABR"):
            policy_selection({"s": [0.1] * 3}, self.ECON)
        with pytest.raises(ValueError, match="align"):
            policy_selection({"s": [0.1]}, self.ECON, [0.1] * 3)

    def test_economics_validation(self):
        with pytest.raises(ValueError):
            LoanEconomics(lgd_grid=(1.5,))
        with pytest.raises(ValueError):
            LoanEconomics(principal_mean=0.0)
        with pytest.raises(ValueError):
            LoanEconomics(interest_mean=-0.1, interest_sd=0.0)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig.from_dict({"mode": "experiment1"})
        assert cfg.trials == 10 and cfg.eval_strategies == ("accepts_only", "reweighted", "bayesian")

    @pytest.mark.parametrize("raw,msg", [
        ({"mode": "fly"}, "mode"),
        ({"mode": "simulate", "colour": 1}, "unknown config field"),
        ({"mode": "simulate", "trials": 0}, "trials"),
        ({"mode": "simulate", "trials": True}, "trials"),
        ({"mode": "simulate", "loop": {"iterations": 0}}, "loop"),
        ({"mode": "simulate", "loop": {"speed": 1}}, "loop"),
        ({"mode": "simulate", "metrics": [{"name": "gini"}]}, "metrics"),
        ({"mode": "simulate", "eval_strategies": ["magic"]}, "eval_strategies"),
        ({"mode": "simulate", "methods": [{"name": "magic"}]}, "methods"),
        ({"mode": "sensitivity"}, "sweep"),
        ({"mode": "sensitivity", "sweep": {"axis": "speed", "grid": [1]}}, "sweep.axis"),
        ({"mode": "sensitivity", "sweep": {"axis": "bad_rate", "grid": []}}, "sweep.grid"),
        ({"mode": "evaluate"}, "data"),
        ({"mode": "impact", "methods": ["basl"]}, "baseline"),
        ({"mode": "experiment2", "methods": []}, "methods"),
        ({"mode": "simulate", "output_dir": ""}, "output_dir"),
    ])
    def test_errors_name_the_field(self, raw, msg):
        with pytest.raises(ConfigError, match=msg):
            RunConfig.from_dict(raw)

    def test_overrides_and_hash(self):
        a = RunConfig.from_dict({"mode": "simulate"}, overrides={"seed": 3, "trials": None})
        assert a.seed == 3 and a.trials == 10
        b = RunConfig.from_dict({"mode": "simulate", "seed": 3})
        assert a.config_hash == b.config_hash
        assert a.config_hash != RunConfig.from_dict({"mode": "simulate"}).config_hash

    def test_load_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"mode": "simulate", "trials": 2}))
        assert load_config(p, seed=5).seed == 5
        p.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(p)
        p.write_text("[1]")
        with pytest.raises(ConfigError, match="object"):
            load_config(p)
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "missing.json")

    def test_metric_label(self):
        assert metric_label(MetricSpec("abr")) == "abr"
        assert metric_label(MetricSpec("abr", (0.3, 0.3))) == "abr[0.3,0.3]"


class TestReports:
    ROWS = [
        {"trial": 0, "kind": "evaluation", "method": "a", "metric": "abr", "estimate": 0.2, "truth": 0.3},
        {"trial": 0, "kind": "evaluation", "method": "b", "metric": "abr", "estimate": 0.35, "truth": 0.3},
        {"trial": 1, "kind": "evaluation", "method": "a", "metric": "abr", "estimate": 0.4, "truth": 0.3},
        {"trial": 1, "kind": "evaluation", "method": "b", "metric": "abr", "estimate": 0.3, "truth": 0.3},
        {"trial": 0, "kind": "training", "method": "oracle", "metric": "auc", "estimate": 0.9, "truth": math.nan},
        {"trial": 0, "kind": "training", "method": "x", "metric": "auc", "estimate": 0.8, "truth": math.nan},
        {"trial": 0, "kind": "training", "method": "y", "metric": "auc", "estimate": 0.7, "truth": math.nan},
    ]

    def test_aggregates_by_hand(self):
        agg = {(r["kind"], r["method"], r["metric"]): r for r in aggregate_rows(self.ROWS)}
        a = agg[("evaluation", "a", "abr")]
        assert a["mean"] == pytest.approx(0.3) and a["bias"] == pytest.approx(0.0)
        assert a["rmse"] == pytest.approx(0.1)
        assert a["avg_rank"] == 2.0 and agg[("evaluation", "b", "abr")]["avg_rank"] == 1.0
        assert agg[("training", "x", "auc")]["avg_rank"] == 1.0
        assert math.isnan(agg[("training", "oracle", "auc")]["avg_rank"])
        assert math.isnan(agg[("training", "x", "auc")]["rmse"])
        assert agg[("evaluation", "b", "all")]["n"] == 2

    def test_emit_and_load(self, tmp_path):
        rep = RunReport(self.ROWS, "abc123", 4, name="t")
        paths = emit_report(rep, tmp_path / "out", charts={"c": "<svg/>"})
        names = sorted(p.name for p in paths)
        assert names == ["t-abc123-aggregate.csv", "t-abc123-c.svg", "t-abc123-meta.json", "t-abc123-raw.csv"]
        back = load_report(tmp_path / "out" / "t-abc123-raw.csv", tmp_path / "out" / "t-abc123-aggregate.csv")
        assert len(back.rows) == len(self.ROWS)
        assert json.loads((tmp_path / "out" / "t-abc123-meta.json").read_text())["seed"] == 4

    def test_tampered_aggregate_is_detected(self, tmp_path):
        emit_report(RunReport(self.ROWS, name="t"), tmp_path)
        agg = tmp_path / "t-aggregate.csv"
        agg.write_text(agg.read_text().replace("0.3", "0.31", 1))
        with pytest.raises(ValueError, match="differs"):
            load_report(tmp_path / "t-raw.csv", agg)

    def test_empty_report_writes_headers(self, tmp_path):
        with pytest.warns(RuntimeWarning, match="no rows"):
            paths = emit_report(RunReport([], name="e"), tmp_path, charts={"c": "<svg/>"})
        assert not any(p.suffix == ".svg" for p in paths)
        assert (tmp_path / "e-raw.csv").read_text().count("\n") == 1


class TestExperiments:
    def test_evaluation_is_deterministic(self):
        cfg = _tiny("experiment1")
        a, b = experiment_evaluation(cfg), experiment_evaluation(cfg)
        assert a.rows == b.rows
        assert {r["method"] for r in a.rows} == {"accepts_only", "reweighted", "bayesian"}
        assert len(a.rows) == 2 * 3 * 2
        truth = a.values("evaluation", "bayesian", "abr", "truth")
        assert np.array_equal(truth, a.values("evaluation", "accepts_only", "abr", "truth"))

    def test_training_includes_the_oracle(self):
        rep = experiment_training(_tiny("experiment2", methods=["ignore", "hca"]))
        assert {r["method"] for r in rep.rows} == {"oracle", "ignore", "hca"}
        assert np.all(np.isfinite(rep.values("training", "ignore", "abr")))

    def test_impact(self):
        econ = {"lgd_grid": [0.05, 1.0], "acceptance_grid": [0.2, 0.5], "n_draws": 200}
        rep, profit, policy = impact_analysis(_tiny("impact", methods=["ignore", "hca"], economics=econ,
                                                    eval_strategies=["accepts_only"]))
        assert {r["method"] for r in profit} == {"oracle", "ignore", "hca"}
        assert {r["strategy"] for r in policy} == {"accepts_only"}
        assert len(policy) == 2
        assert any(r["metric"] == "abr[0.2,0.2]" for r in rep.rows)
