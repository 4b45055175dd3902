import numpy as np
import pytest

from rqlearn.config import load_experiment_config
from rqlearn.crossfit import NuisanceLearners
from rqlearn.exceptions import ConfigError
from rqlearn.harness import (
    ExperimentConfig,
    cell_id,
    resolve_workers,
    run_experiment,
    run_value_study,
    scenario_cells,
)
from rqlearn.learners import LearnerSpec


def tiny_config(**overrides):
    base = dict(
        propensities=("randomized",),
        outcomes=("linear_r",),
        sample_sizes=(150,),
        replications=3,
        learners=NuisanceLearners(
            mu2y=LearnerSpec(kind="linear"),
            mu2a=LearnerSpec(kind="logistic", task="probability"),
            mu1y=LearnerSpec(kind="linear"),
            mu1a=LearnerSpec(kind="logistic", task="probability"),
        ),
        methods=("proposed", "standard_q"),
        inference=(("proposed", "sandwich"), ("standard_q", "none")),
        truth_mc=0,
        value_mc=20_000,
        seed=11,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def strip_walltime(rows):
    return [
        (r.scenario, r.method, r.parameter, r.truth, r.mean_est, r.bias, r.sd,
         r.ci_len, r.coverage, r.reps, r.invalid)
        for r in rows
    ]


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(replications=0)
        with pytest.raises(ConfigError):
            tiny_config(methods=("proposed", "mystery"))
        with pytest.raises(ConfigError):
            tiny_config(inference=(("standard_q", "sandwich"),))
        with pytest.raises(ConfigError):
            tiny_config(inference=(("proposed", "n_of_n"),))

    def test_scenario_grid_collapses_varpi_for_regular(self):
        cfg = tiny_config(outcomes=("linear_r", "linear_nr"), varpis=(0, 1))
        ids = [cell_id(s) for s in scenario_cells(cfg)]
        assert ids == [
            "randomized:linear_r:n150",
            "randomized:linear_nr:v0:n150",
            "randomized:linear_nr:v1:n150",
        ]

    def test_worker_resolution(self, monkeypatch):
        monkeypatch.delenv("RQL_WORKERS", raising=False)
        assert resolve_workers(None, 0) == 1
        assert resolve_workers(3, 0) == 3
        assert resolve_workers(None, 2) == 2
        monkeypatch.setenv("RQL_WORKERS", "4")
        assert resolve_workers(None, 0) == 4
        monkeypatch.setenv("RQL_WORKERS", "junk")
        with pytest.raises(ConfigError):
            resolve_workers(None, 0)


class TestRunExperiment:
    def test_rows_and_coverage_fields(self):
        rows = run_experiment(tiny_config())
        assert len(rows) == 2 * 7  # two methods x (4 + 3) parameters
        proposed = [r for r in rows if r.method == "proposed"]
        assert all(r.coverage is not None for r in proposed)
        assert all(0.0 <= r.coverage <= 1.0 for r in proposed)
        bare = [r for r in rows if r.method == "standard_q"]
        assert all(r.coverage is None and r.ci_len is None for r in bare)
        assert all(r.reps == 3 for r in rows)

    def test_single_replication_reports_no_sd(self):
        rows = run_experiment(tiny_config(replications=1))
        assert all(r.sd is None for r in rows)
        assert all(r.mean_est is not None for r in rows)

    def test_worker_count_does_not_change_results(self):
        cfg = tiny_config(replications=4)
        serial = run_experiment(cfg, workers=1)
        parallel = run_experiment(cfg, workers=2)
        assert strip_walltime(serial) == strip_walltime(parallel)

    def test_same_seed_reproduces(self):
        cfg = tiny_config()
        assert strip_walltime(run_experiment(cfg)) == strip_walltime(run_experiment(cfg))

    def test_failing_cell_marked_invalid(self):
        # A spline too rich for the fold size fails every replication, so the
        # cell is marked invalid with blank statistics.
        cfg = tiny_config(
            sample_sizes=(60,),
            methods=("proposed",),
            inference=(("proposed", "sandwich"),),
            learners=NuisanceLearners(
                mu2y=LearnerSpec(kind="additive_spline", knots=12),
                mu2a=LearnerSpec(kind="logistic", task="probability"),
                mu1y=LearnerSpec(kind="linear"),
                mu1a=LearnerSpec(kind="logistic", task="probability"),
            ),
        )
        rows = run_experiment(cfg)
        assert all(r.invalid for r in rows)
        assert all(r.mean_est is None and r.reps == 0 for r in rows)


class TestValueStudy:
    def test_value_rows_and_regret_sign(self):
        cfg = tiny_config(replications=2, methods=("proposed",),
                          inference=(("proposed", "sandwich"),))
        rows = run_value_study(cfg)
        assert len(rows) == 1
        row = rows[0]
        assert row.reps == 2
        # estimated regimes cannot beat the optimal value beyond MC error
        assert row.mean_value <= row.optimal_value + 0.02


class TestIniConfig:
    def test_round_trip(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(
            "[experiment]\n"
            "replications = 5\n"
            "sample_sizes = 300\n"
            "seed = 99\n"
            "methods = proposed, dwols\n"
            "workers = 2\n"
            "[scenarios]\n"
            "propensity = linear\n"
            "outcome = fgs_r\n"
            "[inference]\n"
            "proposed = sandwich\n"
            "dwols = nofn\n"
            "[learners]\n"
            "mu2a = logistic\n"
            "mu1a = logistic\n"
            "mu2y = super_learner\n"
            "mu1y = linear\n"
            "[super_learner]\n"
            "v_folds = 4\n"
            "outcome_base = linear, forest\n"
            "[forest]\n"
            "trees = 30\n"
        )
        cfg = load_experiment_config(str(ini))
        assert cfg.replications == 5
        assert cfg.sample_sizes == (300,)
        assert cfg.methods == ("proposed", "dwols")
        assert cfg.inference_for("dwols") == "n_of_n"
        assert cfg.learners.mu2y.kind == "super_learner"
        assert cfg.learners.mu2y.v_folds == 4
        assert cfg.learners.mu2y.base[1].trees == 30
        assert cfg.learners.mu1y.kind == "linear"
        assert cfg.workers == 2

    def test_bad_config_rejected(self, tmp_path):
        ini = tmp_path / "bad.ini"
        ini.write_text("[experiment]\nreplications = 2\nsample_sizes = 100\n"
                       "[scenarios]\npropensity = sideways\noutcome = linear_r\n")
        with pytest.raises(ConfigError):
            load_experiment_config(str(ini))

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError):
            load_experiment_config("/nonexistent/exp.ini")
