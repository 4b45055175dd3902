import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rqlearn.data_model import (
    Dataset,
    StageDesign,
    Trajectory,
    build_design_matrices,
    column_design,
    interaction_design,
    trial_design,
)
from rqlearn.exceptions import DataFormatError

from conftest import small_dataset


def _trial_data(rng, n=200):
    x1 = rng.uniform(-0.5, 0.5, size=(n, 5))
    x2 = rng.uniform(-1, 1, size=(n, 5))
    a1 = rng.integers(0, 2, size=n).astype(np.int8)
    r = (x2[:, 3] < 0).astype(np.int8)
    a2 = np.where(r == 1, rng.integers(0, 2, size=n).astype(float), np.nan)
    y = rng.normal(size=n)
    return Dataset(x1=x1, a1=a1, x2=x2, a2=a2, y=y, r=r)


def test_ineligible_row_gets_zero_s_row(rng):
    data = _trial_data(rng)
    mats = build_design_matrices(data, trial_design())
    ineligible = data.r == 0
    assert ineligible.any()
    assert np.all(mats.s[ineligible] == 0.0)


def test_trial_design_matches_direct_computation(rng):
    data = _trial_data(rng, n=1000)
    mats = build_design_matrices(data, trial_design())
    expected = data.r[:, None] * np.column_stack(
        [np.ones(data.n), data.x2[:, 0], data.x2[:, 1], data.x2[:, 2]]
    )
    np.testing.assert_array_equal(mats.s, expected)


def test_w_map_direct_and_intercept(rng):
    data = _trial_data(rng)
    mats = build_design_matrices(data, trial_design())
    np.testing.assert_array_equal(mats.w[:, 0], np.ones(data.n))
    np.testing.assert_array_equal(mats.w[:, 1], data.x1[:, 0])
    np.testing.assert_array_equal(mats.w[:, 2], data.x1[:, 1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_build_is_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    data = _trial_data(rng, n=60)
    design = trial_design()
    mats = build_design_matrices(data, design)
    perm = rng.permutation(data.n)
    permuted = build_design_matrices(data.take(perm), design)
    np.testing.assert_array_equal(permuted.s, mats.s[perm])
    np.testing.assert_array_equal(permuted.w, mats.w[perm])


def test_nonfinite_feature_rejected_with_row_index(rng):
    base = small_dataset(rng)
    data = Dataset(x1=base.x1, a1=base.a1, x2=base.x2, a2=np.ones(base.n), y=base.y)

    def bad_s(x1, a1, x2, r):
        s = np.ones((x1.shape[0], 2))
        s[3, 1] = np.inf
        return s

    def w_map(x1):
        return np.column_stack([np.ones(x1.shape[0]), x1[:, 0]])

    design = StageDesign(s_map=bad_s, w_map=w_map, s_names=("a", "b"), w_names=("c", "d"))
    with pytest.raises(DataFormatError, match="row 3"):
        build_design_matrices(data, design)


def test_missing_a2_with_nonzero_s_rejected(rng):
    data = small_dataset(rng)
    design = column_design([0], [0], [0])  # not eligibility scaled
    assert (~data.a2_observed).any()
    with pytest.raises(DataFormatError, match="nonzero S row"):
        build_design_matrices(data, design)


def test_dataset_invariants():
    x = np.zeros((3, 2))
    with pytest.raises(DataFormatError):
        Dataset(x1=x, a1=np.array([0, 1, 2]), x2=x, a2=np.ones(3), y=np.zeros(3))
    with pytest.raises(DataFormatError):
        Dataset(x1=x, a1=np.zeros(3), x2=x, a2=np.ones(3), y=np.array([0.0, np.nan, 0.0]))
    with pytest.raises(DataFormatError):
        Dataset(x1=x, a1=np.zeros(3), x2=x, a2=np.array([0.0, 0.5, 1.0]), y=np.zeros(3))


def test_trajectory_round_trip(rng):
    data = small_dataset(rng, n=12)
    rows = list(data.rows())
    assert all(isinstance(t, Trajectory) for t in rows)
    back = Dataset.from_trajectories(rows)
    np.testing.assert_array_equal(back.x1, data.x1)
    np.testing.assert_array_equal(back.a2, data.a2)
    np.testing.assert_array_equal(back.r, data.r)


def test_dataset_is_immutable(rng):
    data = small_dataset(rng)
    with pytest.raises(ValueError):
        data.y[0] = 1.0


def test_interaction_design_includes_a1(rng):
    data = _trial_data(rng)
    mats = build_design_matrices(data, interaction_design())
    eligible = data.r == 1
    np.testing.assert_array_equal(
        mats.s[eligible, 1], data.a1[eligible].astype(float)
    )
