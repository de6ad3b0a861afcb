"""Heteroskedasticity-consistent covariance estimators for the adjusted means.

All estimators work from leverage-scaled residuals ``u_ij * s_ij``. With
``HC0`` the scale is 1; with ``HC4`` it is ``(1 - h_ij)^(-delta_ij / 2)``
with ``delta_ij = min(4, h_ij / mean(h))``. The same scaled residuals feed
the sandwich matrix, the diagonal MANCATS matrix and the per-group
covariance matrices.

The ``_batch`` helpers accept residual stacks of shape ``(..., N, p)`` and
are what the bootstrap engine calls once per block of replicates.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateVariance, LeverageAtOne

LEVERAGE_LIMIT = 1.0 - 1e-12
DEGENERATE_RTOL = 1e-14


class HcFlavor(str, enum.Enum):
    HC0 = "HC0"
    HC4 = "HC4"


def hc_scales(leverages, flavor=HcFlavor.HC4):
    """Per-subject residual multipliers for the given flavor."""
    flavor = HcFlavor(flavor)
    h = np.asarray(leverages, dtype=float)
    if flavor is HcFlavor.HC0:
        return np.ones_like(h)
    if np.any(h >= LEVERAGE_LIMIT):
        raise LeverageAtOne(f"leverage {h.max():.15g} is numerically one")
    delta = np.minimum(4.0, h / h.mean())
    return (1.0 - h) ** (-delta / 2.0)


def hc_scaled_residuals(fit, flavor=HcFlavor.HC4):
    """Residual vectors multiplied by their HC scale factor, shape ``(N, p)``."""
    return fit.residuals * hc_scales(fit.hat_diagonals, flavor)[:, None]


def _sandwich_batch(solver_mu, scaled):
    # G[..., r*p + k, j] = A[r, j] * u_jk; the sandwich block is G G'
    a, n = solver_mu.shape
    p = scaled.shape[-1]
    g = solver_mu[:, None, :] * np.swapaxes(scaled, -1, -2)[..., None, :, :]
    g = g.reshape(scaled.shape[:-2] + (a * p, n))
    return g @ np.swapaxes(g, -1, -2)


def _group_sums_batch(values, offsets):
    """Sum rows of ``values`` (..., N, m) within each group -> (..., a, m)."""
    return np.add.reduceat(values, offsets[:-1], axis=-2)


def _variances_batch(scaled, group_sizes, c):
    """``sigma^2_ik`` from scaled residuals, shape (..., a, p)."""
    sizes = np.asarray(group_sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    ss = _group_sums_batch(scaled**2, offsets)
    return ss / (sizes - c - 1)[:, None]


def _coordinate_scale2(y):
    """Squared spread of each outcome coordinate, used for degeneracy checks."""
    yc = y - y.mean(axis=-2, keepdims=True)
    return np.mean(yc**2, axis=-2)


def _degenerate(variances, scale2):
    tiny = np.finfo(float).tiny
    return variances <= DEGENERATE_RTOL * np.maximum(scale2, tiny)[..., None, :]


def sandwich_sigma(fit, design=None, flavor=HcFlavor.HC4):
    """Heteroskedasticity-consistent covariance of the adjusted means.

    Leading ``(a p) x (a p)`` block of
    ``(X~'X~)^-1 X~' S X~ (X~'X~)^-1`` with ``S = ⊕ u~_ij u~_ij'``,
    accumulated subject by subject instead of through the ``Np x Np``
    block-diagonal matrix.
    """
    design = fit.design if design is None else design
    scaled = hc_scaled_residuals(fit, flavor)
    sigma = _sandwich_batch(design.solver[: design.a], scaled)
    return (sigma + sigma.T) / 2


def group_variances(fit, flavor=HcFlavor.HC4):
    """``sigma^2_ik = sum_j u~_ijk^2 / (n_i - c - 1)`` as an ``(a, p)`` array."""
    design = fit.design
    scaled = hc_scaled_residuals(fit, flavor)
    var = _variances_batch(scaled, design.group_sizes, design.c)
    bad = _degenerate(var, _coordinate_scale2(fit.dataset.outcomes))
    if np.any(bad):
        i, k = np.argwhere(bad)[0]
        raise DegenerateVariance(
            f"estimated variance of outcome {k} in group {fit.dataset.labels[i]!r} is numerically zero"
        )
    return var


def diagonal_d_hat(fit, flavor=HcFlavor.HC4):
    """Diagonal matrix with entries ``sigma^2_ik / n_i``, group-major."""
    var = group_variances(fit, flavor)
    sizes = np.asarray(fit.design.group_sizes, dtype=float)
    return np.diag((var / sizes[:, None]).reshape(-1))


def group_sigmas(fit, flavor=HcFlavor.HC4):
    """Residual covariance matrix of each group, shape ``(a, p, p)``.

    ``Sigma_i = sum_j u~_ij u~_ij' / (n_i - c - 1)``.
    """
    design = fit.design
    scaled = hc_scaled_residuals(fit, flavor)
    out = np.empty((design.a, design.p, design.p))
    for i, (lo, hi) in enumerate(zip(design.offsets[:-1], design.offsets[1:])):
        u = scaled[lo:hi]
        out[i] = u.T @ u / (design.group_sizes[i] - design.c - 1)
    return out


@dataclass(frozen=True, eq=False)
class CovarianceEstimates:
    sigma_big: np.ndarray
    d_hat: np.ndarray
    group_sigmas: np.ndarray
    flavor: HcFlavor


def estimate_covariances(fit, flavor=HcFlavor.HC4):
    flavor = HcFlavor(flavor)
    return CovarianceEstimates(
        sigma_big=sandwich_sigma(fit, flavor=flavor),
        d_hat=diagonal_d_hat(fit, flavor),
        group_sigmas=group_sigmas(fit, flavor),
        flavor=flavor,
    )
