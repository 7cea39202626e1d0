import csv
import io
import math
from pathlib import Path

import numpy as np
import pytest

from qla.errors import ConfigError
from qla.estimate import bayes, qmle
from qla.mcstudy import McReport, StudyConfig, dump_csv, run_study, summarize
from qla.model import get_model
from qla.qlik import Observations
from qla.simulate import simulate_paths

DATA = Path(__file__).parent / "data"


def small_config(**kw):
    base = {"model": "exp-sin2", "theta_star": 1.0, "h_list": ["1/50", "1/100"], "replicates": 12,
            "estimators": [{"kind": "qmle", "init": 0.5}, {"kind": "bayes"}, {"kind": "qmle_bayes_init"}],
            "seed": 3}
    base.update(kw)
    return StudyConfig.from_dict(base)


@pytest.fixture(scope="module")
def report():
    return run_study(small_config())


class TestConfig:
    def test_h_list_to_n(self):
        cfg = small_config(h_list=["1/50", 0.004, "1/500"])
        assert cfg.n_list == [50, 250, 500]

    @pytest.mark.parametrize("bad", [
        {"replicates": 0}, {"h_list": ["1/3.5"]}, {"h_list": [0.3]}, {"schema": 2}, {"bogus": 1},
        {"estimators": [{"kind": "mcmc"}]}, {"estimators": [{"kind": "qmle"}]}, {"estimators": []},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            small_config(**bad)

    def test_missing_model(self):
        with pytest.raises(ConfigError):
            StudyConfig.from_dict({"theta_star": 1.0, "estimators": ["bayes"]})

    def test_duplicate_estimators(self):
        with pytest.raises(ConfigError):
            run_study(small_config(estimators=["bayes", "bayes"], replicates=1))


class TestRun:
    def test_cells(self, report):
        assert len(report.cells) == 6
        for c in report.cells:
            assert c["count"] + c["failure_count"] == c["replicates"] == 12
            assert all(s >= 0 for s in c["sd"])
            assert c["mc_standard_error"][0] == pytest.approx(c["sd"][0] / math.sqrt(c["count"]))

    def test_single_replicate(self):
        cfg = small_config(replicates=1, h_list=["1/50"])
        rep = run_study(cfg)
        model = get_model("exp-sin2")
        x, y = simulate_paths(model, 50, 1.0, [1.0], 3, [(0, 50)], "milstein", 10)
        obs = Observations(50, 1.0, x[0], y[0])
        assert rep.cell(50, "qmle(init=0.5)")["mean"][0] == qmle(obs, model, [0.5], multistart=False).theta_hat[0]
        assert rep.cell(50, "bayes")["mean"][0] == bayes(obs, model).theta_hat[0]
        assert all(c["sd"] == [0.0] for c in rep.cells)

    def test_moment_identity(self, report):
        rows = list(csv.DictReader(io.StringIO(dump_csv(report))))
        assert len(rows) == 6 * 12
        for c in report.cells:
            vals = np.array([float(r["theta_hat_1"]) for r in rows
                             if r["estimator"] == c["estimator"] and float(r["h"]) == c["h"] and r["converged"] == "1"])
            assert abs(vals.mean() - c["mean"][0]) < 1e-12
            assert abs(vals.std(ddof=1) - c["sd"][0]) < 1e-12

    def test_bayes_init_column(self, report):
        for n in (50, 100):
            a = report.estimates[(n, "qmle(bayes init)")]
            assert a.shape == (12, 1)

    def test_failures_counted(self):
        cfg = StudyConfig.from_dict({"model": {"form": "constant", "coefficients": {"c": 1.0, "drift": 40.0},
                                               "x0": [1.0]},
                                     "theta_star": 0.0, "n_list": [10], "replicates": 3, "estimators": ["bayes"],
                                     "scheme": "euler"})
        c = run_study(cfg).cells[0]
        assert c["failure_count"] == 3 and c["count"] == 0 and math.isnan(c["mean"][0])

    def test_workers_do_not_change_results(self):
        a = run_study(small_config(replicates=150, h_list=["1/20"], workers=1))
        b = run_study(small_config(replicates=150, h_list=["1/20"], workers=2))
        assert a.to_dict() == b.to_dict()
        for k in a.estimates:
            assert np.array_equal(a.estimates[k], b.estimates[k], equal_nan=True)

    def test_standardized_values(self):
        rep = run_study(small_config(replicates=5, h_list=["1/50"], standardize=True,
                                     estimators=[{"kind": "bayes"}]))
        assert rep.standardized[(50, "bayes")].shape == (5, 1)


class TestSummarize:
    def test_empty(self):
        text, table = summarize(McReport({}, []))
        assert table == "h\n" and text.strip() == "h"

    def test_one_cell_golden(self):
        cell = {"n": 50, "h": 0.02, "h_label": "1/50", "estimator": "bayes", "mean": [0.96473], "sd": [0.48914],
                "mc_standard_error": [0.0], "count": 1, "failure_count": 0, "replicates": 1}
        _, table = summarize(McReport({}, [cell]))
        assert table == (DATA / "one_cell.csv").read_text()

    def test_table_layout(self):
        rep = run_study(small_config(replicates=2, h_list=["1/50", "1/250", "1/500"]))
        text, table = summarize(rep)
        rows = list(csv.reader(io.StringIO(table)))
        assert len(rows) == 4 and len(rows[0]) == 7
        assert [r[0] for r in rows[1:]] == ["1/50", "1/250", "1/500"]
        assert rows[0][1:3] == ["qmle(init=0.5) mean", "qmle(init=0.5) s.d."]
        assert len(text.splitlines()) == 4
