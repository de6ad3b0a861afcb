import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mancats import Dataset, build_design, design_matrix, fit_ols, hat_diagonal
from mancats.errors import (
    DimensionMismatch,
    GroupTooSmall,
    IndexOutOfRange,
    InvalidDataset,
    RankDeficientDesign,
)

from oracles import mp_leverages, mp_normal_equations, random_dataset_arrays


def test_design_matrix_indicators_only():
    assert_array_equal(design_matrix((1, 1)), [[1, 0], [0, 1]])


def test_design_matrix_with_covariate():
    x = design_matrix((2, 2), [1, 2, 3, 4])
    assert_array_equal(x, [[1, 0, 1], [1, 0, 2], [0, 1, 3], [0, 1, 4]])


def test_covariate_constant_within_groups_is_rank_deficient():
    ds = Dataset(np.arange(8.0), np.ones(8), (4, 4))
    with pytest.raises(RankDeficientDesign):
        build_design(ds)


def test_noiseless_recovery():
    rng = np.random.default_rng(3)
    sizes = (6, 5, 7)
    z = rng.normal(size=(18, 2))
    mu = np.array([[1.0, -2.0], [0.5, 0.0], [3.0, 1.0]])
    nu = np.array([[0.7, -1.2], [2.0, 0.3]])
    y = np.repeat(mu, sizes, axis=0) + z @ nu
    fit = fit_ols(Dataset(y, z, sizes))
    assert_allclose(fit.mu_hat, mu.reshape(-1), atol=1e-10)
    assert_allclose(fit.nu_hat, nu.reshape(-1), atol=1e-10)
    assert_allclose(fit.residuals, 0.0, atol=1e-10)


def test_coefficients_match_extended_precision_normal_equations():
    rng = np.random.default_rng(11)
    y, z = random_dataset_arrays(rng, sizes=(5, 7), p=2, c=2)
    ds = Dataset(y, z, (5, 7))
    fit = fit_ols(ds)
    expected = mp_normal_equations(design_matrix((5, 7), z), y)
    assert_allclose(fit.coef, expected, rtol=1e-9, atol=1e-9)


def test_coefficient_layout_is_group_major():
    # mu[i * p + k] belongs to group i, outcome k
    y = np.array([[1.0, 10.0], [3.0, 30.0], [5.0, 50.0], [7.0, 70.0]])
    fit = fit_ols(Dataset(y, None, (2, 2)))
    assert_allclose(fit.mu_hat, [2.0, 20.0, 6.0, 60.0])


def test_balanced_one_way_leverages():
    design = build_design(Dataset(np.zeros((20, 1)), None, (10, 10)))
    assert_allclose(design.leverages, 0.1)
    assert hat_diagonal(design, 1, 9) == pytest.approx(0.1)


def test_leverages_match_extended_precision_oracle():
    rng = np.random.default_rng(5)
    y, z = random_dataset_arrays(rng, sizes=(6, 6), p=1, c=2)
    design = build_design(Dataset(y, z, (6, 6)))
    assert_allclose(design.leverages, mp_leverages(design.x), atol=1e-12)
    assert_allclose(design.leverages.sum(), 4.0)


def test_row_subject_roundtrip_and_bounds():
    design = build_design(Dataset(np.zeros((9, 1)), None, (4, 5)))
    assert design.row(1, 0) == 4
    assert design.subject(8) == (1, 4)
    with pytest.raises(IndexOutOfRange):
        design.row(0, 4)
    with pytest.raises(IndexOutOfRange):
        design.subject(9)


def test_group_size_guard():
    # n_i must be at least c + 2 for the group variance estimators
    with pytest.raises(GroupTooSmall):
        Dataset(np.zeros((2, 1)), None, (1, 1))
    with pytest.raises(GroupTooSmall):
        Dataset(np.zeros((6, 1)), np.arange(6.0), (2, 4))


def test_dataset_validation():
    with pytest.raises(InvalidDataset):
        Dataset(np.zeros((4, 1)), None, (4,))
    with pytest.raises(InvalidDataset):
        Dataset(np.array([1.0, np.nan, 2.0, 3.0]), None, (2, 2))
    with pytest.raises(DimensionMismatch):
        Dataset(np.zeros((5, 1)), None, (2, 2))


def test_dataset_arrays_are_read_only():
    ds = Dataset(np.zeros((4, 2)), None, (2, 2))
    with pytest.raises(ValueError):
        ds.outcomes[0, 0] = 1.0


def test_from_groups_stacks_group_major():
    ys = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0]]
    zs = [[0.1, 0.2, 0.3], [0.4, 0.5, 0.6, 0.7]]
    ds = Dataset.from_groups(ys, zs, labels=("a", "b"))
    assert ds.group_sizes == (3, 4)
    assert_array_equal(ds.outcomes[:, 0], [1, 2, 3, 4, 5, 6, 7])
    assert ds.c == 1
    assert ds.labels == ("a", "b")


def test_fit_rejects_foreign_design():
    d1 = Dataset(np.zeros((4, 1)), None, (2, 2))
    d2 = Dataset(np.zeros((5, 1)), None, (2, 3))
    with pytest.raises(DimensionMismatch):
        fit_ols(d2, build_design(d1))
