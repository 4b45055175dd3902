import numpy as np
import pytest
from dataclasses import replace

import rqlearn
from rqlearn.robust_q import Regime
from rqlearn.simgen import (
    Scenario,
    delta1,
    delta2,
    f_main,
    g_blip,
    gen_covariates,
    gen_response,
    gen_x2,
    project_true_beta2,
    propensity,
    regime_value,
    simulate_dataset,
)


class TestCovariates:
    def test_supports(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=100_000, seed=1)
        rng = np.random.default_rng(0)
        x1, u01 = gen_covariates(scen, rng)
        assert x1.min() >= -0.5 and x1.max() <= 0.5
        a1 = rng.integers(0, 2, size=scen.n).astype(np.int8)
        x2 = gen_x2(scen, x1, a1, u01, rng)
        assert np.abs(x2[:, :3]).max() <= 1.0  # sum of two U[-0.5, 0.5]
        assert np.abs(x2[:, 4]).max() <= 0.5

    def test_bernoulli_intermediate_probability(self):
        # At x11 = x12 = 0.25 the first Bernoulli covariate has probability 1/2.
        scen = Scenario(propensity="randomized", outcome="linear_nr", n=200_000, seed=2)
        rng = np.random.default_rng(3)
        x1 = np.full((scen.n, 5), 0.25)
        u01 = rng.uniform(size=(scen.n, 7))
        x2 = gen_x2(scen, x1, np.zeros(scen.n, dtype=np.int8), u01, rng)
        assert set(np.unique(x2[:, 0])) <= {0.0, 1.0}
        assert abs(x2[:, 0].mean() - 0.5) < 0.005

    def test_interaction_covariate_depends_on_a1(self):
        scen = Scenario(propensity="randomized", outcome="linear_nr_interact", n=100_000, seed=4, varpi=1)
        rng = np.random.default_rng(5)
        x1, u01 = gen_covariates(scen, rng)
        x2_treated = gen_x2(scen, x1, np.ones(scen.n, dtype=np.int8), u01, rng)
        x2_control = gen_x2(scen, x1, np.zeros(scen.n, dtype=np.int8), u01, rng)
        assert x2_treated[:, 0].mean() < x2_control[:, 0].mean()
        assert x2_treated[:, 1].min() >= 0.0  # interaction-family uniforms sit on [0, 1]


class TestPropensity:
    def test_randomized_is_coin_flip(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=10, seed=0)
        x = np.random.default_rng(1).uniform(-0.5, 0.5, size=(50, 5))
        np.testing.assert_array_equal(propensity(scen, 1, x), np.full(50, 0.5))

    def test_linear_at_origin(self):
        scen = Scenario(propensity="linear", outcome="linear_r", n=10, seed=0)
        assert propensity(scen, 1, np.zeros((1, 5)))[0] == pytest.approx(0.5)

    def test_quadratic_at_half(self):
        # all covariates at 0.5: lambda = 1.4 * (1.8 - 2) = -0.28
        scen = Scenario(propensity="quadratic", outcome="linear_r", n=10, seed=0)
        mu = propensity(scen, 2, np.full((1, 5), 0.5))[0]
        assert mu == pytest.approx(1.0 / (1.0 + np.exp(0.28)), abs=1e-10)
        assert mu == pytest.approx(0.4305, abs=1e-4)

    def test_interquad_adds_product_term(self):
        scen_q = Scenario(propensity="quadratic", outcome="linear_r", n=10, seed=0)
        scen_iq = Scenario(propensity="interquad", outcome="linear_r", n=10, seed=0)
        x = np.full((1, 5), 0.5)
        lam_gap = (
            np.log(propensity(scen_iq, 2, x) / (1 - propensity(scen_iq, 2, x)))
            - np.log(propensity(scen_q, 2, x) / (1 - propensity(scen_q, 2, x)))
        )[0]
        assert lam_gap == pytest.approx(1.4 * 0.25, abs=1e-10)


class TestOutcome:
    def test_nonlinear_main_effect_value(self):
        x = np.array([[0.1, 0.2, 0.3, 0.0, 0.0]])
        assert f_main(x)[0] == pytest.approx(-0.9572, abs=1e-4)

    def test_blip_surface_value(self):
        x = np.array([[0.5, 0.5, 0.0, 0.0, 0.0]])
        assert g_blip(x)[0] == pytest.approx(np.sqrt(2.0), abs=1e-5)

    def test_linear_blip_example(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=10, seed=0)
        x2 = np.array([[0.2, 0.3, 0.1, -0.2, 0.4]])
        d2 = delta2(scen, np.array([1.0]), x2, np.array([1], dtype=np.int8))
        assert d2[0] == pytest.approx(0.5)
        assert delta2(scen, np.array([1.0]), x2, np.array([0], dtype=np.int8))[0] == 0.0


class TestResponse:
    def test_strict_threshold(self):
        assert gen_response(np.array([-0.1]))[0] == 1
        assert gen_response(np.array([0.0]))[0] == 0
        assert gen_response(np.array([0.1]))[0] == 0

    def test_population_rate_is_half(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=1_000_000, seed=6)
        rng = np.random.default_rng(7)
        x1, u01 = gen_covariates(scen, rng)
        x2 = gen_x2(scen, x1, np.zeros(scen.n, dtype=np.int8), u01, rng)
        r = gen_response(x2[:, 3])
        assert abs(r.mean() - 0.5) < 0.002


class TestSimulateDataset:
    def test_regular_truth_and_missingness(self):
        data, truth = simulate_dataset(Scenario(propensity="linear", outcome="linear_r", n=500, seed=8))
        np.testing.assert_array_equal(truth.beta2_star, [0.0, 1.0, 1.0, 0.0])
        np.testing.assert_array_equal(truth.beta1_star, np.zeros(3))
        assert np.array_equal(data.a2_observed, data.r == 1)

    def test_nonregular_truth_and_full_a2(self):
        for varpi in (0, 1):
            data, truth = simulate_dataset(
                Scenario(propensity="linear", outcome="linear_nr", n=300, seed=9, varpi=varpi)
            )
            np.testing.assert_array_equal(truth.beta2_star, [0.0, 2.0 * varpi, 0.0, 0.0])
            assert data.a2_observed.all()

    def test_interaction_truth(self):
        _, truth = simulate_dataset(
            Scenario(propensity="randomized", outcome="nonlinear_nr_interact", n=300, seed=10, varpi=1)
        )
        np.testing.assert_array_equal(truth.beta2_star, [0.0, 2.0, 2.0, 0.0])
        assert truth.beta1_star is None  # needs Monte Carlo

    def test_byte_identical_given_seed(self):
        scen = Scenario(propensity="quadratic", outcome="fgs_r", n=400, seed=11)
        a, _ = simulate_dataset(scen)
        b, _ = simulate_dataset(scen)
        np.testing.assert_array_equal(a.x1, b.x1)
        np.testing.assert_array_equal(a.a2, b.a2)
        np.testing.assert_array_equal(a.y, b.y)
        c, _ = simulate_dataset(replace(scen, seed=12))
        assert not np.array_equal(a.y, c.y)

    def test_randomized_treatment_rates(self):
        data, _ = simulate_dataset(Scenario(propensity="randomized", outcome="linear_r", n=20000, seed=13))
        assert abs(data.a1.mean() - 0.5) < 3 * 0.5 / np.sqrt(data.n)
        obs = data.a2_observed
        assert abs(data.a2_filled[obs].mean() - 0.5) < 3 * 0.5 / np.sqrt(obs.sum())


class TestNonRegularityDegree:
    def test_varpi_zero_blip_is_identically_zero(self):
        scen = Scenario(propensity="linear", outcome="nonlinear_nr", n=50_000, seed=14, varpi=0)
        data, truth = simulate_dataset(scen)
        mats = rqlearn.build_design_matrices(data, rqlearn.trial_design())
        assert np.all(mats.s @ truth.beta2_star == 0.0)

    def test_varpi_one_zero_blip_has_interior_probability(self):
        scen = Scenario(propensity="linear", outcome="nonlinear_nr", n=50_000, seed=15, varpi=1)
        data, truth = simulate_dataset(scen)
        mats = rqlearn.build_design_matrices(data, rqlearn.trial_design())
        p_zero = np.mean(np.abs(mats.s @ truth.beta2_star) == 0.0)
        assert 0.05 < p_zero < 0.95


class TestProjectionOracle:
    def test_constant_blip_recovered(self):
        # Degenerate check through the linear family: theta2 pattern makes the
        # projection reproduce the generating coefficients exactly.
        scen = Scenario(propensity="randomized", outcome="linear_r", n=10, seed=0)
        beta = project_true_beta2(scen, n_mc=200_000, seed=3)
        np.testing.assert_allclose(beta, [0.0, 1.0, 1.0, 0.0], atol=0.02)

    def test_seed_stability(self):
        scen = Scenario(propensity="randomized", outcome="fgs_r", n=10, seed=0)
        a = project_true_beta2(scen, n_mc=150_000, seed=4)
        b = project_true_beta2(scen, n_mc=150_000, seed=5)
        np.testing.assert_allclose(a, b, atol=0.05)


class TestRegimeValue:
    def test_true_optimal_regime_has_zero_regret(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=10, seed=0)
        optimal = Regime(beta1=np.zeros(3), beta2=np.array([0.0, 1.0, 1.0, 0.0]))
        res = regime_value(scen, optimal, n_mc=200_000, seed=6)
        assert res.regret == pytest.approx(0.0, abs=0.01)

    def test_always_treat_is_weakly_worse(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=10, seed=0)
        always = Regime(beta1=np.array([1.0, 0.0, 0.0]), beta2=np.array([1.0, 0.0, 0.0, 0.0]))
        res = regime_value(scen, always, n_mc=200_000, seed=7)
        assert res.regret > 0.0
        assert res.value < res.optimal_value

    def test_interaction_family_delta1_matches_mc(self):
        # The closed-form first-stage blip must agree with a brute-force
        # counterfactual Monte Carlo at a handful of covariate points.
        scen = Scenario(propensity="randomized", outcome="linear_nr_interact", n=10, seed=0, varpi=1)
        rng = np.random.default_rng(8)
        for x11, x15 in ((-0.3, 0.2), (0.0, 0.0), (0.4, -0.4)):
            x1 = np.tile(np.array([x11, 0.1, -0.2, 0.3, x15]), (200_000, 1))
            u01 = rng.uniform(size=(200_000, 7))
            vals = {}
            for a1v in (0, 1):
                a1 = np.full(200_000, a1v, dtype=np.int8)
                x2 = gen_x2(scen, x1, a1, u01, rng)
                r = gen_response(x2[:, 3], scen.response_median)
                d2 = delta2(scen, a1.astype(float), x2, r)
                eta = rqlearn.simgen.eta2(scen, x1, a1.astype(float), x2)
                vals[a1v] = np.mean(eta + np.clip(d2, 0.0, None))
            mc = vals[1] - vals[0]
            closed = delta1(scen, x1[:1])[0]
            assert closed == pytest.approx(mc, abs=0.02)
