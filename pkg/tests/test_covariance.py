import numpy as np
import pytest
from numpy.testing import assert_allclose

from mancats import Dataset, diagonal_d_hat, fit_ols, group_sigmas, group_variances, sandwich_sigma
from mancats.covariance import HcFlavor, estimate_covariances, hc_scaled_residuals, hc_scales
from mancats.errors import DegenerateVariance, LeverageAtOne
from mancats.ingest import group_residual_covariances, load_rohwer

from oracles import hc4_scales, kron_sandwich, random_dataset_arrays


def _random_fit(seed, sizes=(5, 7), p=2, c=2):
    rng = np.random.default_rng(seed)
    y, z = random_dataset_arrays(rng, sizes, p, c)
    return fit_ols(Dataset(y, z, sizes))


def test_balanced_design_uses_unit_exponent():
    fit = fit_ols(Dataset(np.arange(20.0) ** 1.5, None, (10, 10)))
    assert_allclose(hc_scales(fit.hat_diagonals), (1 - 0.1) ** -0.5)


def test_hc0_is_identity():
    fit = _random_fit(0)
    assert_allclose(hc_scaled_residuals(fit, "HC0"), fit.residuals)


def test_exponent_is_capped_at_four():
    h = np.array([0.05] * 9 + [0.45])  # last leverage is five times the mean
    scales = hc_scales(h, HcFlavor.HC4)
    assert scales[-1] == pytest.approx((1 - 0.45) ** -2.0)
    assert_allclose(scales, hc4_scales(h))


def test_leverage_one_is_rejected_for_hc4_only():
    h = np.array([0.2, 1.0, 0.3])
    with pytest.raises(LeverageAtOne):
        hc_scales(h, "HC4")
    assert_allclose(hc_scales(h, "HC0"), 1.0)


def test_sandwich_reduces_to_white_variance_of_group_means():
    rng = np.random.default_rng(1)
    y = rng.normal(size=9)
    ds = Dataset(y, None, (4, 5))
    sigma = sandwich_sigma(fit_ols(ds), flavor="HC0")
    for i, sl in enumerate((slice(0, 4), slice(4, 9))):
        u = y[sl] - y[sl].mean()
        assert sigma[i, i] == pytest.approx(np.sum(u**2) / u.size**2)
    assert sigma[0, 1] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("flavor", ["HC0", "HC4"])
def test_sandwich_matches_kronecker_assembly(flavor):
    fit = _random_fit(7)
    h = fit.hat_diagonals
    scale = hc4_scales(h) if flavor == "HC4" else np.ones_like(h)
    expected = kron_sandwich(fit.design.x, fit.residuals * scale[:, None], fit.design.a)
    got = sandwich_sigma(fit, flavor=flavor)
    assert_allclose(got, expected, rtol=1e-9, atol=1e-9 * np.abs(expected).max())


def test_group_variance_without_covariates_is_empirical_variance():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(13, 3))
    fit = fit_ols(Dataset(y, None, (6, 7)))
    var = group_variances(fit, "HC0")
    assert_allclose(var[0], y[:6].var(axis=0, ddof=1))
    assert_allclose(var[1], y[6:].var(axis=0, ddof=1))


def test_alternating_unit_residuals():
    y = np.array([1.0, -1.0, 1.0, -1.0, 2.0, 0.0, 2.0, 0.0])
    var = group_variances(fit_ols(Dataset(y, None, (4, 4))), "HC0")
    assert_allclose(var, [[4 / 3], [4 / 3]])


def test_group_variances_match_scalar_recomputation():
    fit = _random_fit(9, sizes=(6, 8), p=3, c=1)
    h = fit.hat_diagonals
    scale = hc4_scales(h)
    var = group_variances(fit)
    for i, (lo, hi) in enumerate(((0, 6), (6, 14))):
        for k in range(3):
            total = 0.0
            for j in range(lo, hi):
                total += (fit.residuals[j, k] * scale[j]) ** 2
            assert var[i, k] == pytest.approx(total / (hi - lo - 2), rel=1e-12)
    assert_allclose(np.diag(diagonal_d_hat(fit)), (var / np.array([[6], [8]])).reshape(-1))


def test_group_sigmas_diagonal_agrees_with_group_variances():
    fit = _random_fit(12)
    for flavor in ("HC0", "HC4"):
        sig = group_sigmas(fit, flavor)
        assert_allclose(np.diagonal(sig, axis1=1, axis2=2), group_variances(fit, flavor))
        assert_allclose(sig, np.swapaxes(sig, 1, 2))


def test_zero_residuals():
    z = np.linspace(0, 1, 8)
    fit = fit_ols(Dataset(np.column_stack([2 * z, 1 - z]), z, (4, 4)))
    assert_allclose(group_sigmas(fit), 0.0, atol=1e-25)
    with pytest.raises(DegenerateVariance):
        group_variances(fit)


def test_estimate_covariances_bundle():
    fit = _random_fit(2)
    est = estimate_covariances(fit, "HC0")
    assert est.sigma_big.shape == (4, 4)
    assert est.d_hat.shape == (4, 4)
    assert est.group_sigmas.shape == (2, 2, 2)


# Rohwer kindergarten data: two SES groups, outcomes PPVT and SAT, one covariate

ROHWER_HI = [[145.88, 113.18], [113.18, 1073.21]]
ROHWER_LO = [[99.07, 60.85], [60.85, 458.41]]


def test_rohwer_descriptive_covariances():
    ds = load_rohwer()
    assert ds.labels == ("Lo", "Hi")
    assert ds.group_sizes == (37, 32)
    lo, hi = group_residual_covariances(ds)
    assert_allclose(np.round(hi, 2), ROHWER_HI, atol=1e-9)
    assert_allclose(np.round(lo, 2), ROHWER_LO, atol=1e-9)


def test_rohwer_common_slope_covariances():
    # common-slope model, divisor n_i - c - 1; values frozen from this implementation
    lo, hi = group_sigmas(fit_ols(load_rohwer()), "HC0")
    assert_allclose(np.round(hi, 2), [[152.53, 126.21], [126.21, 1156.96]], atol=1e-9)
    assert_allclose(np.round(lo, 2), [[102.50, 65.72], [65.72, 487.73]], atol=1e-9)
    assert_allclose(group_residual_covariances(load_rohwer(), separate_slopes=False), [lo, hi])


@pytest.mark.parametrize("separate", [True, False])
def test_rohwer_sum_outcome_gives_singular_covariances(separate):
    sig = group_residual_covariances(load_rohwer(singular=True), separate_slopes=separate)
    for s in sig:
        assert_allclose(s[2], s[0] + s[1], rtol=1e-12)
        assert_allclose(s[:, 2], s[:, 0] + s[:, 1], rtol=1e-12)
        assert abs(np.linalg.det(s)) < 1e-6 * np.prod(np.diag(s))
    hi = sig[1]
    if separate:
        assert_allclose(np.round(hi[2], 2), [259.06, 1186.39, 1445.45], atol=1e-9)
