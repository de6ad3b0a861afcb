import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from mancats import correlated_errors, get_preset, run_power_experiment, run_size_experiment, standardized_noise
from mancats.errors import NotPSD, UnknownScenarioPreset
from mancats.simulation import (
    CovariateRule,
    ScenarioConfig,
    build_covariates,
    preset_names,
    scenario_limit_weights,
    scenario_sigmas,
)


@pytest.mark.parametrize("kind", ["normal", "chisq5", "lognormal", "dexp"])
def test_noise_is_standardized(kind):
    x = standardized_noise(kind, 1_000_000, np.random.default_rng(10))
    assert abs(x.mean()) < 0.005
    # the lognormal sample variance has a standard error near 0.01 at this size
    assert abs(x.var() - 1.0) < (0.05 if kind == "lognormal" else 0.01)


def test_normal_noise_is_plain_standard_normal():
    a = standardized_noise("normal", 50, np.random.default_rng(3))
    assert_array_equal(a, np.random.default_rng(3).standard_normal(50))


def test_lognormal_noise_skewness():
    x = standardized_noise("lognormal", 1_000_000, np.random.default_rng(11))
    target = (math.e + 2) * math.sqrt(math.e - 1)
    assert abs(stats.skew(x) - target) < 0.5


def test_chisq_noise_is_shifted_and_scaled():
    x = standardized_noise("chisq5", 10, np.random.default_rng(4))
    raw = np.random.default_rng(4).chisquare(5, 10)
    assert_allclose(x, (raw - 5) / math.sqrt(10))


def test_unknown_distribution():
    with pytest.raises(ValueError):
        standardized_noise("cauchy", 3, np.random.default_rng(0))


def test_correlated_errors_identity():
    xi = np.random.default_rng(0).normal(size=(20, 3))
    assert_allclose(correlated_errors(np.eye(3), xi), xi)


def test_correlated_errors_rank_one():
    sig = scenario_sigmas("III", 2, 2)[0]
    eps = correlated_errors(sig, np.random.default_rng(1).normal(size=(1000, 2)))
    assert_allclose(eps[:, 1], 0.5 * eps[:, 0], atol=1e-10)


def test_correlated_errors_covariance():
    sig = scenario_sigmas("II", 2, 2)[1]
    assert_allclose(sig, [[2.0, 0.5], [0.5, 2.0]])
    n = 100_000
    eps = correlated_errors(sig, np.random.default_rng(2).normal(size=(n, 2)))
    emp = eps.T @ eps / n
    se = np.sqrt((sig**2 + np.outer(np.diag(sig), np.diag(sig))) / n)
    assert np.all(np.abs(emp - sig) < 3 * se)


def test_covariate_grid_small():
    z = build_covariates((2, 2))
    assert_allclose(z[:, 0], [-10, -10 / 3, 10 / 3, 10])
    assert_allclose(z[:, 1], [5, 0, -1, -2])


def test_covariate_grid_per_group_halves():
    z = build_covariates((4, 2), CovariateRule(halves="per-group"))
    assert_allclose(z[:, 1], [5, 0, -1, -2, 5, -1])


def test_random_covariates_are_reproducible():
    rule = CovariateRule(second="normal")
    z1 = build_covariates((5, 5), rule, np.random.default_rng(9))
    z2 = build_covariates((5, 5), rule, np.random.default_rng(9))
    assert_array_equal(z1, z2)
    assert build_covariates((5, 5), CovariateRule(second="none")).shape == (10, 1)


def _small(name="table1-I-normal-10-10", **kw):
    kw.setdefault("n_sim", 30)
    kw.setdefault("n_boot", 40)
    return replace(get_preset(name, "smoke"), **kw)


def test_alpha_one_rejects_everything():
    rep = run_size_experiment(_small(alpha=1.0, n_sim=10))
    for m in rep.rejections:
        assert rep.proportion(m) == 1.0


def test_single_dataset_run():
    rep = run_size_experiment(_small(n_sim=1))
    assert {rep.proportion(m) for m in rep.rejections} <= {0.0, 1.0}
    assert len(rep.rows()) == 4


def test_wilks_fails_on_singular_scenario():
    rep = run_size_experiment(_small("table1-III-normal-10-10", n_sim=5))
    assert rep.failures["WI"] == 5
    assert rep.proportion("WI") is None
    assert rep.failures["MP"] == 0


def test_results_do_not_depend_on_worker_count():
    cfg = _small(n_sim=150, n_boot=30)
    one = run_size_experiment(cfg, workers=1)
    two = run_size_experiment(cfg, workers=2)
    assert one.rejections == two.rejections


def test_zero_shift_power_equals_size():
    cfg = _small(n_sim=20)
    size = run_size_experiment(cfg)
    (power,) = run_power_experiment(cfg, [0.0])
    assert power.rejections == size.rejections
    assert power.delta == 0.0


def test_power_grows_with_shift():
    cfg = _small("figure2-III-normal", n_sim=60, n_boot=60)
    reports = run_power_experiment(cfg, [0.0, 1.0, 3.0])
    for m in cfg.methods:
        props = [r.proportion(m) for r in reports]
        se = [r.standard_error(m) for r in reports]
        for k in range(2):
            assert props[k + 1] >= props[k] - 3 * max(se[k], se[k + 1], 0.01)
        assert props[-1] > 0.5


def test_limit_weights_for_scenario_two():
    w = scenario_limit_weights(get_preset("table1-II-normal-20-20"))
    assert w.shape == (4,)
    assert_allclose(w[2:], 0.0, atol=1e-12)
    assert np.all(w[:2] > 0)


def test_presets():
    names = preset_names()
    assert "table1-I-normal-20-20" in names
    assert "table5-S-lognormal-46-23" in names
    cfg = get_preset("table1-I-normal-20-20", "desk")
    assert (cfg.n_sim, cfg.n_boot, cfg.profile) == (2000, 1000, "desk")
    assert get_preset("tableS3-II-normal-200-200", "full").n_sim == 1000
    with pytest.raises(UnknownScenarioPreset):
        get_preset("table9-I-normal-1-1")
    with pytest.raises(UnknownScenarioPreset):
        get_preset("table1-I-normal-20-20", "huge")


def test_rohwer_scenarios_use_one_covariate():
    cfg = get_preset("table5-S-normal-32-37")
    assert cfg.p == 3 and cfg.covariates.c == 1
    assert np.linalg.matrix_rank(cfg.sigmas[1]) == 2


def test_scenario_validation():
    sig = [np.eye(2), np.eye(2)]
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", group_sizes=(5, 5), sigmas=sig[:1])
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", group_sizes=(5, 5), sigmas=sig, nu=[1.0])
    with pytest.raises(ValueError):
        ScenarioConfig(name="x", group_sizes=(5, 5), sigmas=sig, methods=("XX",))
    with pytest.raises(NotPSD):
        ScenarioConfig(name="x", group_sizes=(5, 5), sigmas=[np.diag([1.0, -1.0]), np.eye(2)])


def test_report_rows_echo_seed_and_profile():
    rep = run_size_experiment(_small(n_sim=3))
    row = rep.rows()[0]
    assert row["seed"] == 20190501 and row["profile"] == "smoke"
    assert row["n_sim"] == 3
