"""Heteroskedasticity-robust multivariate analysis of covariance.

Fit a MANCOVA model with group-specific covariance matrices, then test a
linear hypothesis on the covariate-adjusted mean vectors with the Wald-type
statistic, the MANCATS statistic calibrated by a wild or parametric
bootstrap, or classical Wilks' Lambda.
"""

__version__ = "0.1.0"

from .bootstrap import (
    BootstrapConfig,
    BootstrapResult,
    Scheme,
    Statistic,
    bootstrap_p_value,
    bootstrap_test,
    bootstrap_test_result,
    parametric_bootstrap_sample,
    wild_bootstrap_sample,
)
from .covariance import (
    HcFlavor,
    diagonal_d_hat,
    estimate_covariances,
    group_sigmas,
    group_variances,
    sandwich_sigma,
)
from .errors import *  # noqa: F401,F403
from .hypothesis import (
    HypothesisProjector,
    one_way_contrast,
    one_way_projector,
    projector_from_contrast,
)
from .ingest import group_residual_covariances, load_rohwer, read_dataset
from .model import Dataset, MancovaFit, build_design, design_matrix, fit_ols, hat_diagonal
from .simulation import (
    ScenarioConfig,
    SimulationReport,
    correlated_errors,
    get_preset,
    run_power_experiment,
    run_size_experiment,
    scenario_limit_weights,
    standardized_noise,
)
from .statistics import (
    TestResult,
    limit_weights,
    mancats_statistic,
    wald_statistic,
    wilks_lambda,
)
