from __future__ import annotations

import json
import math

import numpy as np
import pytest
from conftest import write_synthetic_logistic_csv

from parametric_dro.bench.cli import main
from parametric_dro.bench.experiments import (
    ExperimentConfig,
    RunRecord,
    Task,
    poisson_run,
    read_jsonl,
    run_logistic_bench,
    run_poisson_sim,
    summarize,
    true_model_for,
    write_outputs,
)
from parametric_dro.bench.metrics import (
    classification_metrics,
    mean_log_loss,
    out_of_sample_divergence,
    risk_summaries,
)
from parametric_dro.bench.verify import CHECKS, run_verify
from parametric_dro.dataio import TrueModel
from parametric_dro.errors import ConfigError, InvalidInputError, UndefinedMetricError
from parametric_dro.expfam import bernoulli

E_MINUS_2 = 0.71828182845904523536


def _tiny_poisson(**kw):
    base = dict(task="poisson-sim", sizes=[30], runs=2, support_size=4, dim=2, a_grid=[0.0, 0.1],
                eps_points=2, penalty_grid=[0.0, 0.01], kl_eps_grid=[0.0, 0.1], seed=3)
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def _tiny_logistic(csv, **kw):
    base = dict(task="logistic-bench", runs=2, a_grid=[0.0, 0.1], penalty_grid=[1e-3, 1e-1],
                kl_eps_grid=[0.0, 0.1], dataset=str(csv), seed=1)
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def _strip_timing(records):
    out = []
    for r in records:
        d = r.to_dict()
        d.pop("timing")
        out.append(d)
    return out


class TestMetrics:
    def test_divergence_reference(self):
        m = TrueModel(np.array([[1.0]]), np.array([1.0]), np.array([0.0]))
        # w0.x = 0, w*.x = 1: 1 * (0 - 1 - 1) + e = e - 2
        assert out_of_sample_divergence(m, [1.0]) == pytest.approx(E_MINUS_2, abs=1e-15)
        assert out_of_sample_divergence(m, [0.0]) == 0.0

    def test_divergence_shape(self):
        m = TrueModel(np.eye(2), np.array([0.5, 0.5]), np.array([0.5, -0.5]))
        with pytest.raises(InvalidInputError):
            out_of_sample_divergence(m, [1.0])

    def test_auc_examples(self):
        assert classification_metrics([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])[0] == pytest.approx(0.75)
        auc, ccr = classification_metrics([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        assert auc == 1.0 and ccr == 1.0

    def test_all_ties(self):
        auc, ccr = classification_metrics([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1])
        assert auc == 0.5 and ccr == 0.5

    def test_one_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            classification_metrics([0.1, 0.2], [1, 1])

    def test_auc_against_pair_count(self, rng):
        s = rng.random(40).round(1)
        y = rng.integers(0, 2, 40)
        pos, neg = s[y == 1], s[y == 0]
        ref = np.mean([(a > b) + 0.5 * (a == b) for a in pos for b in neg])
        assert classification_metrics(s, y)[0] == pytest.approx(ref, abs=1e-14)

    def test_cvar(self):
        s = risk_summaries(np.arange(1.0, 101.0), level=0.05)
        assert s.cvar == pytest.approx(98.0)
        assert s.mean == pytest.approx(50.5)

    def test_constant(self):
        s = risk_summaries([2.0, 2.0, 2.0])
        assert tuple(s) == (2.0, 0.0, 2.0)

    def test_mean_log_loss(self):
        assert mean_log_loss(bernoulli(), [[1.0], [1.0]], [0, 1], [0.0]) == pytest.approx(math.log(2.0))


class TestConfig:
    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({})

    @pytest.mark.parametrize("bad", [{"runs": 0}, {"methods": ["SVM"]}, {"a_grid": [-1.0]}, {"kappa": 0.5},
                                     {"eps_rule": "max"}, {"colour": 1}, {"sizes": []}])
    def test_invalid_fields(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"task": "poisson-sim", **bad})

    def test_round_trip(self, tmp_path):
        cfg = _tiny_poisson()
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_json(p) == cfg

    def test_unreadable(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(p)


class TestPoissonSim:
    def test_record_count_and_determinism(self):
        cfg = _tiny_poisson(methods=["DRO", "MLE", "L1", "L2", "KL"])
        a = run_poisson_sim(cfg)
        assert len(a) == 1 * 2 * 5
        assert all(r.status == "ok" for r in a)
        assert _strip_timing(a) == _strip_timing(run_poisson_sim(cfg))

    def test_dro_at_zero_radius_equals_mle(self):
        cfg = _tiny_poisson(a_grid=[0.0], eps_max=0.0, eps_points=1, methods=["DRO", "MLE"])
        recs = poisson_run(cfg, true_model_for(cfg), 30, 0)
        d = {r.method: r.metrics["divergence"] for r in recs}
        assert d["DRO"] == pytest.approx(d["MLE"], abs=1e-8)

    def test_oracle_selection_never_worse_than_mle(self):
        # a = 0 and eps = 0 is on the grid, so the selected DRO fit can only improve
        cfg = _tiny_poisson(runs=3, methods=["DRO", "MLE"])
        recs = run_poisson_sim(cfg)
        for run in range(3):
            d = {r.method: r.metrics["divergence"] for r in recs if r.run == run}
            assert d["DRO"] <= d["MLE"] + 1e-10

    def test_outputs(self, tmp_path):
        cfg = _tiny_poisson()
        recs = run_poisson_sim(cfg)
        paths = write_outputs(cfg, recs, tmp_path)
        assert set(paths) == {"records", "summary", "metadata", "figure"}
        back = read_jsonl(paths["records"])
        assert _strip_timing(back) == _strip_timing(recs)
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert meta["n_records"] == len(recs)

    def test_summary_relative_rows(self):
        recs = [RunRecord("DRO", r, 10, 0, metrics={"divergence": 1.0}) for r in range(2)]
        recs += [RunRecord("MLE", r, 10, 0, metrics={"divergence": 2.0}) for r in range(2)]
        rows = summarize(recs, Task.POISSON_SIM)
        rel = [row for row in rows if row["method"] == "DRO_vs_MLE"]
        assert rel[0]["mean"] == pytest.approx(-50.0)


class TestLogisticBench:
    def test_runs(self, tmp_path):
        csv = write_synthetic_logistic_csv(tmp_path / "s.csv", N=200, n=3)
        cfg = _tiny_logistic(csv, intercept=True)
        recs = run_logistic_bench(cfg)
        assert len(recs) == 2 * 5
        for r in recs:
            assert r.status == "ok"
            assert 0.0 <= r.metrics["test_auc"] <= 1.0
        assert _strip_timing(recs) == _strip_timing(run_logistic_bench(cfg))

    def test_needs_dataset(self):
        with pytest.raises(ConfigError):
            run_logistic_bench(ExperimentConfig.defaults("logistic-bench"))


class TestVerify:
    def test_all_checks_pass(self):
        report = run_verify()
        assert report.passed, report.lines()
        assert len(report.results) == len(CHECKS)

    def test_impossible_tolerance_fails(self):
        cfg = ExperimentConfig.from_dict({"task": "verify", "tolerances": {"gradient_fd": 0.0},
                                          "checks": ["gradient_fd"]})
        assert not run_verify(cfg).passed

    def test_unknown_tolerance(self):
        cfg = ExperimentConfig.from_dict({"task": "verify", "tolerances": {"nope": 1.0}})
        with pytest.raises(ConfigError):
            run_verify(cfg)


class TestCli:
    def test_verify_ok(self, capsys):
        assert main(["verify"]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_verify_failure_exit(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"task": "verify", "tolerances": {"kl_closed_form": 0.0},
                                 "checks": ["kl_closed_form"]}))
        assert main(["verify", "--config", str(p)]) == 4

    def test_usage_errors(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["nonsense"])
        assert info.value.code == 1
        p = tmp_path / "c.json"
        p.write_text("{}")
        assert main(["poisson-sim", "--config", str(p)]) == 1

    def test_data_error(self, tmp_path):
        assert main(["logistic-bench", str(tmp_path / "missing.csv")]) == 2

    def test_poisson_sim_writes(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(_tiny_poisson(runs=1, methods=["DRO", "MLE"]).to_dict()))
        assert main(["poisson-sim", "--config", str(p), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "figure1.csv").exists()

    def test_worst_case(self, tmp_path, capsys):
        csv = write_synthetic_logistic_csv(tmp_path / "s.csv", N=120, n=2)
        assert main(["worst-case", str(csv), "--a", "0.1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["family"] == "bernoulli"
        assert abs(sum(doc["q_star"]) - 1.0) < 1e-10

    def test_worst_case_separable_mle(self, tmp_path):
        p = tmp_path / "sep.csv"
        p.write_text("x,label\n-2,0\n-1,0\n1,1\n2,1\n")
        assert main(["worst-case", str(p)]) == 2
        assert main(["worst-case", str(p), "--construction", "moment_match"]) == 0
