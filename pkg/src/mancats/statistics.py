"""Test statistics for hypotheses ``T mu = 0`` on adjusted means.

* Wald-type statistic ``W = mu' T (T Sigma T)^+ T mu`` with a chi-square
  reference on ``rank(T)`` degrees of freedom.
* MANCATS ``A = mu' T (T D T)^+ T mu`` with a diagonal ``D``; its null
  distribution is a weighted sum of chi-square(1) variables with unknown
  weights, so p-values come from a bootstrap (see :mod:`mancats.bootstrap`).
* Wilks' Lambda for the covariate-adjusted one-way comparison, Rao's F
  approximation.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DegenerateVariance, DimensionMismatch, SingularCovariance
from .linalg import sym_pinv

PINV_RTOL = 1e-10
# projected means below this fraction of max|mu| are rounding noise
NULL_RTOL = 1e-12
WILKS_SINGULAR_RTOL = 1e-12


@dataclass
class TestResult:
    """Outcome of one test.

    ``reference`` names the distribution the p-value was computed from:
    ``"chi-square"``, ``"bootstrap-empirical"``, ``"F-approximation"`` or
    ``"weighted-chi-square"``. ``p_value`` is ``None`` for a MANCATS value
    that has not been calibrated yet.
    """

    __test__ = False  # not a pytest class

    method: str
    statistic: float
    reference: str = None
    p_value: float = None
    df: float = None
    rank_used: int = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "method": self.method,
            "statistic": self.statistic,
            "reference": self.reference,
            "p_value": self.p_value,
            "df": self.df,
            "rank_used": self.rank_used,
            "diagnostics": dict(self.diagnostics),
        }


def _as_matrix(projector):
    return np.asarray(getattr(projector, "matrix", projector), dtype=float)


def range_basis(t, tol=1e-8):
    """Orthonormal rows spanning the range of the projector ``t``, shape ``(f, m)``."""
    w, v = np.linalg.eigh((t + t.T) / 2)
    return v[:, w > 1 - tol].T.copy()


def projected_quadratic(mu, t, cov, rtol=PINV_RTOL, basis=None):
    """``(T mu)' (T C T)^+ (T mu)`` for stacks of ``mu`` and ``cov``.

    Returns the statistic and the numerical rank of ``T C T``. With
    ``T = B'B`` for orthonormal ``B`` the value equals
    ``(B mu)' (B C B')^+ (B mu)``, so only an ``f x f`` matrix is inverted.
    Components of ``B mu`` at rounding level are set to zero, so means that
    satisfy the hypothesis exactly give a statistic of exactly zero.
    """
    b = range_basis(t) if basis is None else basis
    bmu = mu @ b.T
    scale = np.abs(mu).max(axis=-1, keepdims=True)
    bmu = np.where(np.abs(bmu) <= NULL_RTOL * scale, 0.0, bmu)
    middle = b @ cov @ b.T
    middle = (middle + np.swapaxes(middle, -1, -2)) / 2
    pinv, rank = sym_pinv(middle, rtol=rtol)
    stat = (bmu[..., None, :] @ pinv @ bmu[..., :, None])[..., 0, 0]
    return np.maximum(stat, 0.0), rank


def _check_dims(mu, t, cov_shape):
    m = mu.shape[-1]
    if t.shape != (m, m):
        raise DimensionMismatch(f"projector is {t.shape}, mean vector has length {m}")
    if cov_shape[-2:] != (m, m):
        raise DimensionMismatch(f"covariance is {cov_shape[-2:]}, mean vector has length {m}")


def wald_statistic(mu_hat, sigma_big, projector):
    """Wald-type test with the asymptotic chi-square reference."""
    mu = np.asarray(mu_hat, dtype=float)
    sigma = np.asarray(sigma_big, dtype=float)
    t = _as_matrix(projector)
    _check_dims(mu, t, sigma.shape)
    f = getattr(projector, "rank", None)
    if f is None:
        f = int(round(np.trace(t)))
    stat, rank = projected_quadratic(mu, t, sigma)
    stat = float(stat)
    diagnostics = {}
    if int(rank) < f:
        diagnostics["singular_covariance"] = True
    return TestResult(
        method="wald",
        statistic=stat,
        reference="chi-square",
        p_value=float(stats.chi2.sf(stat, f)),
        df=f,
        rank_used=int(rank),
        diagnostics=diagnostics,
    )


def mancats_statistic(mu_hat, d_hat, projector):
    """MANCATS value; ``d_hat`` may be the diagonal matrix or its diagonal."""
    mu = np.asarray(mu_hat, dtype=float)
    d = np.asarray(d_hat, dtype=float)
    if d.ndim == 2:
        if d.shape[0] != d.shape[1]:
            raise DimensionMismatch("d_hat must be square")
        d = np.diag(d)
    t = _as_matrix(projector)
    _check_dims(mu, t, (d.size, d.size))
    if np.any(d <= 0):
        raise DegenerateVariance("diagonal variance estimate is not strictly positive")
    stat, rank = projected_quadratic(mu, t, np.diag(d))
    return TestResult(method="mancats", statistic=float(stat), rank_used=int(rank))


def _rao_f(lam, p, q, df_error):
    """Rao's F approximation to Wilks' Lambda; exact when p <= 2 or q <= 2."""
    denom = p**2 + q**2 - 5
    t = np.sqrt((p**2 * q**2 - 4) / denom) if denom > 0 else 1.0
    df1 = p * q
    w = df_error + q - (p + q + 1) / 2
    df2 = w * t - (p * q - 2) / 2
    root = lam ** (1.0 / t)
    f_stat = (1.0 - root) / root * df2 / df1
    return f_stat, df1, df2


def _residual_sscp(x, y):
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    u = y - x @ coef
    return u.T @ u


def wilks_lambda(dataset, fit=None):
    """Wilks' Lambda for equal adjusted means across all groups.

    ``Lambda = det(E) / det(E + H)``, where ``E`` is the residual SSCP of the
    full model and ``E + H`` that of the model with one common intercept.

    Raises
    ------
    SingularCovariance
        When ``E`` is singular, e.g. when one outcome is a linear combination
        of the others.
    """
    if fit is None:
        from .model import fit_ols

        fit = fit_ols(dataset)
    u = fit.residuals
    e = u.T @ u
    scale = np.sqrt(np.clip(np.diag(e), np.finfo(float).tiny, None))
    corr_det = np.linalg.det(e / np.outer(scale, scale))
    if not corr_det > WILKS_SINGULAR_RTOL:
        raise SingularCovariance(
            f"residual SSCP matrix is singular (normalised determinant {corr_det:.3g})"
        )
    n, p, a, c = dataset.n_total, dataset.p, dataset.a, dataset.c
    x_reduced = np.hstack([np.ones((n, 1)), dataset.covariates])
    e_reduced = _residual_sscp(x_reduced, dataset.outcomes)
    _, logdet_e = np.linalg.slogdet(e)
    _, logdet_r = np.linalg.slogdet(e_reduced)
    lam = float(np.exp(logdet_e - logdet_r))
    q = a - 1
    df_error = n - a - c
    f_stat, df1, df2 = _rao_f(lam, p, q, df_error)
    return TestResult(
        method="wilks",
        statistic=lam,
        reference="F-approximation",
        p_value=float(stats.f.sf(f_stat, df1, df2)),
        df=float(df1),
        rank_used=p,
        diagnostics={"F": float(f_stat), "df1": float(df1), "df2": float(df2)},
    )


# --- limiting distribution of MANCATS (simulation oracle only) -------------


def mean_covariance_limit(design, sigmas):
    """``N * Cov(mu_hat)`` for known group covariance matrices.

    Exact for the finite design; this is the block of the sandwich formula
    evaluated with the true ``Sigma_i`` instead of residual outer products.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    a_mu = design.solver[: design.a]
    group = np.repeat(np.arange(design.a), design.group_sizes)
    a, p = design.a, design.p
    # sum_j (A_rj A_sj) Sigma_{g(j)} arranged as (r, k, s, m)
    w = np.einsum("rj,sj->rsj", a_mu, a_mu)
    per_group = np.stack([w[:, :, group == i].sum(axis=-1) for i in range(a)])
    cov = np.einsum("irs,ikm->rksm", per_group, sigmas).reshape(a * p, a * p)
    return design.n_total * cov


def diagonal_limit(group_sizes, sigmas):
    """``D = ⊕_i ⊕_k (N / n_i) sigma^2_ik``, returned as its diagonal."""
    sizes = np.asarray(group_sizes, dtype=float)
    var = np.array([np.diag(s) for s in np.asarray(sigmas, dtype=float)])
    return (sizes.sum() / sizes[:, None] * var).reshape(-1)


def limit_weights(projector, d_limit, lambda11, imag_tol=1e-8):
    """Weights of the chi-square mixture that MANCATS converges to.

    Eigenvalues of ``T (T D T)^+ T Lambda11``, sorted in decreasing order.
    Both inputs are population quantities, so this is only usable when the
    truth is known, as in a simulation.
    """
    t = _as_matrix(projector)
    d = np.asarray(d_limit, dtype=float)
    if d.ndim == 1:
        d = np.diag(d)
    inner, _ = sym_pinv(t @ d @ t, rtol=PINV_RTOL)
    ev = np.linalg.eigvals(t @ inner @ t @ np.asarray(lambda11, dtype=float))
    scale = max(1.0, np.abs(ev).max())
    if np.abs(ev.imag).max() > imag_tol * scale:
        raise ArithmeticError("limit weights have non-negligible imaginary parts")
    return np.sort(ev.real)[::-1]


def sample_weighted_chi2(weights, size, rng):
    """Draws of ``sum_k w_k U_k`` with ``U_k`` i.i.d. chi-square(1)."""
    w = np.asarray(weights, dtype=float)
    z = rng.standard_normal((size, w.size))
    return (z**2) @ w
