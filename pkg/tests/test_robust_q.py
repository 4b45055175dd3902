import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

import rqlearn
from rqlearn.data_model import Dataset, NuisanceEstimates, build_design_matrices, trial_design
from rqlearn.exceptions import PositiveDefiniteError
from rqlearn.robust_q import (
    Regime,
    decide,
    fit_robust_q,
    fit_stage1,
    fit_stage2,
    pseudo_outcome,
    sandwich_cov,
    wald_ci,
)
from rqlearn.simgen import Scenario, simulate_dataset, true_nuisances


def brute_force_wls(z, target, mask):
    """Independent normal-equations oracle: explicit loops, plain solve."""
    d = z.shape[1]
    gram = np.zeros((d, d))
    rhs = np.zeros(d)
    for i in np.where(mask)[0]:
        for a in range(d):
            rhs[a] += z[i, a] * target[i]
            for b in range(d):
                gram[a, b] += z[i, a] * z[i, b]
    return np.linalg.solve(gram, rhs)


def random_instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n if n is not None else int(rng.integers(8, 41))
    x1 = rng.uniform(-1, 1, size=(n, 3))
    x2 = rng.uniform(-1, 1, size=(n, 4))
    a1 = rng.integers(0, 2, size=n).astype(np.int8)
    r = np.ones(n, dtype=np.int8)
    r[rng.integers(0, n)] = 0  # at least one ineligible row
    a2 = np.where(r == 1, rng.integers(0, 2, size=n).astype(float), np.nan)
    y = rng.normal(size=n)
    data = Dataset(x1=x1, a1=a1, x2=x2, a2=a2, y=y, r=r)
    nuis = NuisanceEstimates(
        mu1a=rng.uniform(0.2, 0.8, size=n),
        mu2a=rng.uniform(0.2, 0.8, size=n),
        mu2y=rng.normal(size=n),
        fold_of=np.zeros(n, dtype=np.int64),
        clip_eps=0.01,
        mu1y=rng.normal(size=n),
    )
    return data, nuis


class TestStage2:
    def test_matches_brute_force_oracle_on_small_instances(self):
        design = trial_design()
        for seed in range(50):
            data, nuis = random_instance(seed)
            mats = build_design_matrices(data, design)
            fit = fit_stage2(data, design, nuis)
            mask = data.a2_observed
            z = np.where(mask, data.a2_filled - nuis.mu2a, 0.0)[:, None] * mats.s
            expect = brute_force_wls(z, data.y - nuis.mu2y, mask)
            np.testing.assert_allclose(fit.beta, expect, rtol=1e-10, atol=1e-12)

    def test_oracle_nuisances_recover_linear_blip(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=20000, seed=101)
        data, _ = simulate_dataset(scen)
        nuis = true_nuisances(scen, data)
        fit = fit_stage2(data, trial_design(), nuis)
        np.testing.assert_allclose(fit.beta, [0.0, 1.0, 1.0, 0.0], atol=0.05)

    def test_null_second_stage_effect(self):
        # No effect anywhere: every component within 3 standard errors of 0.
        scen = Scenario(propensity="randomized", outcome="linear_nr", n=4000, seed=5, varpi=0)
        data, _ = simulate_dataset(scen)
        nuis = true_nuisances(scen, data)
        fit = fit_stage2(data, trial_design(), nuis)
        assert np.all(np.abs(fit.beta) < 3.0 * fit.se)

    def test_residual_orthogonality(self):
        design = trial_design()
        data, nuis = random_instance(7, n=40)
        mats = build_design_matrices(data, design)
        fit = fit_stage2(data, design, nuis)
        mask = data.a2_observed
        z = np.where(mask, data.a2_filled - nuis.mu2a, 0.0)[:, None] * mats.s
        resid = (data.y - nuis.mu2y) - z @ fit.beta
        assert np.max(np.abs(z[mask].T @ resid[mask])) < 1e-8

    def test_centering_shift_invariance(self):
        # Adding any history-measurable function to both Y and mu2y leaves
        # the blip estimate unchanged.
        scen = Scenario(propensity="randomized", outcome="linear_r", n=800, seed=11)
        data, _ = simulate_dataset(scen)
        nuis = true_nuisances(scen, data)
        design = trial_design()
        base = fit_stage2(data, design, nuis)
        shift = 3.0 * np.sin(data.x2[:, 0]) + data.x1[:, 0] ** 2
        shifted_data = Dataset(
            x1=data.x1, a1=data.a1, x2=data.x2, a2=data.a2, y=data.y + shift, r=data.r
        )
        shifted_nuis = NuisanceEstimates(
            mu1a=nuis.mu1a, mu2a=nuis.mu2a, mu2y=nuis.mu2y + shift,
            fold_of=nuis.fold_of, clip_eps=nuis.clip_eps, mu1y=nuis.mu1y,
        )
        alt = fit_stage2(shifted_data, design, shifted_nuis)
        np.testing.assert_allclose(alt.beta, base.beta, rtol=1e-10, atol=1e-12)


class TestPseudoOutcome:
    def _one_row(self, sb, a2, y=1.0):
        data = Dataset(
            x1=np.zeros((1, 2)), a1=np.array([1]), x2=np.array([[sb, 0.0]]),
            a2=np.array([float(a2)]), y=np.array([y]), r=np.array([1], dtype=np.int8),
        )
        design = rqlearn.column_design([], [0], [0], s_eligibility_scaled=True)
        nuis = NuisanceEstimates(
            mu1a=np.array([0.5]), mu2a=np.array([0.5]), mu2y=np.array([0.0]),
            fold_of=np.zeros(1, dtype=np.int64), clip_eps=0.01,
        )
        # beta2 = (0, 1): the score is the stored x2 value itself
        return pseudo_outcome(data, design, np.array([0.0, 1.0]), nuis)[0]

    def test_optimal_action_taken_keeps_outcome(self):
        assert self._one_row(sb=0.5, a2=1) == pytest.approx(1.0)

    def test_forgone_benefit_added(self):
        assert self._one_row(sb=0.5, a2=0) == pytest.approx(1.5)

    def test_harmful_action_removed(self):
        assert self._one_row(sb=-0.5, a2=1) == pytest.approx(1.5)

    def test_zero_score_tie_is_zero_correction(self):
        assert self._one_row(sb=0.0, a2=1) == pytest.approx(1.0)

    def test_identity_when_action_matches_rule(self):
        data, nuis = random_instance(21, n=30)
        design = trial_design()
        beta2 = np.array([0.2, 1.0, -0.5, 0.3])
        mats = build_design_matrices(data, design)
        rule = (mats.s @ beta2 > 0).astype(float)
        agreed = data.a2_observed & (data.a2_filled == rule)
        tilde = pseudo_outcome(data, design, beta2, nuis)
        np.testing.assert_array_equal(tilde[agreed], data.y[agreed])

    def test_model_mode_uses_conditional_means(self):
        data, nuis = random_instance(22, n=30)
        design = trial_design()
        beta2 = np.array([0.1, 0.4, 0.0, 0.0])
        mats = build_design_matrices(data, design)
        sb = mats.s @ beta2
        expect = nuis.mu2y + sb * ((sb > 0) - nuis.mu2a)
        np.testing.assert_allclose(
            pseudo_outcome(data, design, beta2, nuis, mode="model"), expect
        )


class TestStage1:
    def test_matches_brute_force_oracle(self):
        design = trial_design()
        for seed in range(50):
            data, nuis = random_instance(1000 + seed)
            stage2 = fit_stage2(data, design, nuis)
            pseudo = pseudo_outcome(data, design, stage2.beta, nuis)
            fit = fit_stage1(data, design, pseudo, nuis, stage2)
            mats = build_design_matrices(data, design)
            z = (data.a1 - nuis.mu1a)[:, None] * mats.w
            expect = brute_force_wls(z, pseudo - nuis.mu1y, np.ones(data.n, dtype=bool))
            np.testing.assert_allclose(fit.beta, expect, rtol=1e-10, atol=1e-12)

    def test_oracle_nuisances_recover_null_stage1(self):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=20000, seed=202)
        data, _ = simulate_dataset(scen)
        nuis = true_nuisances(scen, data)
        design = trial_design()
        stage2 = fit_stage2(data, design, nuis)
        pseudo = pseudo_outcome(data, design, stage2.beta, nuis)
        fit = fit_stage1(data, design, pseudo, nuis, stage2)
        np.testing.assert_allclose(fit.beta, np.zeros(3), atol=0.05)
        assert fit.khat is not None and fit.khat.shape == (3, 4)

    def test_reduces_to_plain_residual_regression_when_pseudo_is_y(self):
        # With no second-stage correction the stage-1 path must coincide with
        # the stage-2 code run on relabeled data whose blip design equals W.
        data, nuis = random_instance(33, n=36)
        design = trial_design()
        stage2 = fit_stage2(data, design, nuis)
        fit1 = fit_stage1(data, design, data.y.copy(), nuis, stage2)

        relabeled = Dataset(
            x1=data.x1, a1=data.a1, x2=data.x2,
            a2=data.a1.astype(float), y=data.y, r=data.r,
        )
        relabeled_nuis = NuisanceEstimates(
            mu1a=nuis.mu1a, mu2a=nuis.mu1a, mu2y=nuis.mu1y,
            fold_of=nuis.fold_of, clip_eps=nuis.clip_eps, mu1y=nuis.mu1y,
        )
        # S := (1, x1_0, x1_1) reproduces W exactly.
        relabeled_design = rqlearn.column_design([0, 1], [], [0, 1])
        fit2 = fit_stage2(relabeled, relabeled_design, relabeled_nuis)
        np.testing.assert_allclose(fit1.beta, fit2.beta, rtol=1e-10, atol=1e-12)


class TestSandwich:
    def test_identity_pieces(self):
        np.testing.assert_allclose(sandwich_cov(np.eye(2), np.eye(2), 100), np.eye(2) / 100)

    def test_scaling(self):
        np.testing.assert_allclose(
            sandwich_cov(2 * np.eye(2), np.eye(2), 100), np.eye(2) / 400
        )

    def test_random_spd_matches_dense_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.normal(size=(3, 3))
            v = a @ a.T + 0.5 * np.eye(3)
            b = rng.normal(size=(3, 3))
            q = b @ b.T + 0.5 * np.eye(3)
            vi = np.linalg.inv(v)
            np.testing.assert_allclose(
                sandwich_cov(v, q, 50), vi @ q @ vi / 50, rtol=1e-10, atol=1e-12
            )

    def test_singular_v_raises(self):
        with pytest.raises(PositiveDefiniteError):
            sandwich_cov(np.zeros((2, 2)), np.eye(2), 10)


class TestWaldCi:
    def test_basic_interval(self):
        lo, hi = wald_ci(np.array([1.0]), np.array([0.1]))
        assert lo[0] == pytest.approx(0.804, abs=1e-3)
        assert hi[0] == pytest.approx(1.196, abs=1e-3)

    def test_zero_se_degenerates(self):
        lo, hi = wald_ci(np.array([2.0]), np.array([0.0]))
        assert lo[0] == hi[0] == 2.0

    def test_ninety_percent_quantile(self):
        lo, hi = wald_ci(np.array([0.0]), np.array([1.0]), level=0.90)
        assert lo[0] == pytest.approx(-1.645, abs=1e-3)
        assert hi[0] == pytest.approx(1.645, abs=1e-3)

    def test_negative_se_rejected(self):
        with pytest.raises(ValueError):
            wald_ci(np.array([0.0]), np.array([-1.0]))


class TestDecide:
    def test_positive_score_treats(self):
        regime = Regime(beta1=np.array([0.5, -1.0]), beta2=np.array([1.0]))
        a1, a2 = decide(regime, np.array([1.0, 0.2]), np.array([0.3]))
        assert (a1, a2) == (1, 1)

    def test_zero_score_tie_gives_control(self):
        regime = Regime(beta1=np.array([1.0]), beta2=np.array([1.0]))
        assert decide(regime, np.array([0.0]), np.array([0.0])) == (0, 0)

    def test_dimension_mismatch(self):
        regime = Regime(beta1=np.array([1.0, 2.0]), beta2=np.array([1.0]))
        with pytest.raises(ValueError):
            decide(regime, np.array([1.0]), np.array([1.0]))

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 999))
    def test_positive_rescaling_invariance(self, scale, seed):
        rng = np.random.default_rng(seed)
        beta1, beta2 = rng.normal(size=3), rng.normal(size=4)
        regime = Regime(beta1=beta1, beta2=beta2)
        scaled = Regime(beta1=scale * beta1, beta2=scale * beta2)
        w, s = rng.normal(size=3), rng.normal(size=4)
        assert decide(regime, w, s) == decide(scaled, w, s)


class TestFullPipeline:
    def test_deterministic_given_seed(self, fast_learners):
        scen = Scenario(propensity="randomized", outcome="linear_r", n=400, seed=9)
        data, _ = simulate_dataset(scen)
        design = trial_design()
        a = fit_robust_q(data, design, fast_learners, k_folds=2, seed=5)
        b = fit_robust_q(data, design, fast_learners, k_folds=2, seed=5)
        np.testing.assert_array_equal(a.stage2.beta, b.stage2.beta)
        np.testing.assert_array_equal(a.stage1.cov, b.stage1.cov)
        np.testing.assert_array_equal(a.pseudo_outcome, b.pseudo_outcome)

    def test_result_shapes_and_regime(self, fast_learners):
        scen = Scenario(propensity="linear", outcome="linear_r", n=500, seed=13)
        data, _ = simulate_dataset(scen)
        res = fit_robust_q(data, trial_design(), fast_learners, seed=1)
        assert res.stage2.beta.shape == (4,)
        assert res.stage1.beta.shape == (3,)
        assert res.stage1.khat.shape == (3, 4)
        assert res.pseudo_outcome.shape == (data.n,)
        a1, a2 = decide(res.regime, np.array([1.0, 0.1, 0.2]), np.zeros(4))
        assert a1 in (0, 1) and a2 == 0
