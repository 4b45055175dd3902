import numpy as np
import pytest

import rqlearn
from rqlearn.crossfit import NuisanceLearners, crossfit_nuisances, make_folds
from rqlearn.data_model import Dataset, trial_design
from rqlearn.exceptions import FoldClassError, RqlearnError
from rqlearn.learners import LearnerSpec


def test_two_folds_partition():
    plan = make_folds(10, 2, seed=1)
    sizes = np.bincount(plan.assignment)
    assert sizes.tolist() == [5, 5]
    assert sorted(np.where(plan.assignment == 0)[0].tolist() + np.where(plan.assignment == 1)[0].tolist()) == list(range(10))


def test_three_fold_balance():
    plan = make_folds(10, 3, seed=2)
    assert sorted(np.bincount(plan.assignment).tolist(), reverse=True) == [4, 3, 3]


def test_fold_determinism():
    a = make_folds(57, 4, seed=9).assignment
    b = make_folds(57, 4, seed=9).assignment
    np.testing.assert_array_equal(a, b)
    c = make_folds(57, 4, seed=10).assignment
    assert not np.array_equal(a, c)


def test_bad_fold_counts_rejected():
    with pytest.raises(RqlearnError):
        make_folds(5, 6)
    with pytest.raises(RqlearnError):
        make_folds(5, 1)


@pytest.fixture
def randomized_data():
    scen = rqlearn.Scenario(propensity="randomized", outcome="linear_r", n=2000, seed=77)
    data, _ = rqlearn.simulate_dataset(scen)
    return data


def test_randomized_propensity_recovered(randomized_data, fast_learners):
    plan = make_folds(randomized_data.n, 2, seed=0)
    est = crossfit_nuisances(randomized_data, trial_design(), fast_learners, plan)
    # Stage 2 trains on eligible rows only (~n/4 per fold complement), so its
    # noise floor sits slightly higher than stage 1's.
    assert np.mean(np.abs(est.mu2a[randomized_data.a2_observed] - 0.5)) < 0.07
    assert np.mean(np.abs(est.mu1a - 0.5)) < 0.05


def test_fold_isolation_under_label_poisoning(randomized_data, fast_learners):
    design = trial_design()
    plan = make_folds(randomized_data.n, 2, seed=3)
    base = crossfit_nuisances(randomized_data, design, fast_learners, plan)

    fold0 = plan.assignment == 0
    y = randomized_data.y.copy()
    y[fold0] += 1000.0
    poisoned = Dataset(
        x1=randomized_data.x1, a1=randomized_data.a1, x2=randomized_data.x2,
        a2=randomized_data.a2, y=y, r=randomized_data.r,
    )
    alt = crossfit_nuisances(poisoned, design, fast_learners, plan)
    np.testing.assert_array_equal(alt.mu2y[fold0], base.mu2y[fold0])
    assert not np.array_equal(alt.mu2y[~fold0], base.mu2y[~fold0])


def test_treatment_predictions_clipped(randomized_data):
    # A deterministic-looking treatment drives raw predictions to the edges.
    data = randomized_data
    a2 = np.where(np.isnan(data.a2), np.nan, (data.x2[:, 0] > 0).astype(float))
    near_det = Dataset(x1=data.x1, a1=data.a1, x2=data.x2, a2=a2, y=data.y, r=data.r)
    specs = NuisanceLearners(
        mu2y=LearnerSpec(kind="linear"),
        mu2a=LearnerSpec(kind="logistic", task="probability"),
        mu1y=LearnerSpec(kind="linear"),
        mu1a=LearnerSpec(kind="logistic", task="probability"),
    )
    plan = make_folds(data.n, 2, seed=4)
    est = crossfit_nuisances(near_det, trial_design(), specs, plan, clip_eps=0.01)
    assert est.mu2a.max() <= 0.99 + 1e-12
    assert est.mu2a.min() >= 0.01 - 1e-12
    assert est.mu2a.max() == pytest.approx(0.99)


def test_missing_class_in_fold_complement_named(fast_learners):
    rng = np.random.default_rng(5)
    n = 40
    x1 = rng.uniform(-0.5, 0.5, size=(n, 5))
    x2 = rng.uniform(-0.5, 0.5, size=(n, 5))
    data = Dataset(
        x1=x1, a1=np.zeros(n, dtype=np.int8), x2=x2,
        a2=np.ones(n), y=rng.normal(size=n),
        r=np.ones(n, dtype=np.int8),
    )
    plan = make_folds(n, 2, seed=6)
    with pytest.raises(FoldClassError):
        crossfit_nuisances(data, trial_design(), fast_learners, plan)


def test_mu1y_left_unset_without_pseudo(randomized_data, fast_learners):
    plan = make_folds(randomized_data.n, 2, seed=7)
    est = crossfit_nuisances(randomized_data, trial_design(), fast_learners, plan)
    assert est.mu1y is None
    est2 = crossfit_nuisances(
        randomized_data, trial_design(), fast_learners, plan,
        pseudo_outcome=randomized_data.y,
    )
    assert est2.mu1y is not None and np.isfinite(est2.mu1y).all()
