"""Grouped multivariate data with covariates and the OLS MANCOVA fit.

Observations are stored group-major, subject-minor: row ``l`` of every
``(N, ...)`` array belongs to group ``i`` and subject ``j`` with
``l = offsets[i] + j``. Coefficient vectors follow the Kronecker layout
``(x' ⊗ I_p)``, i.e. adjusted mean ``mu[i * p + k]`` and slope
``nu[w * p + k]``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    GroupTooSmall,
    IndexOutOfRange,
    InvalidDataset,
    NumericalFailure,
    RankDeficientDesign,
)

RANK_RTOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Outcomes and fixed covariates of ``a`` groups.

    Parameters
    ----------
    outcomes : array_like, shape (N, p)
        Outcome vectors, group-major.
    covariates : array_like, shape (N, c)
        Covariate vectors in the same row order. ``c`` may be zero.
    group_sizes : sequence of int
        ``n_1, ..., n_a``; must sum to ``N``.
    labels : sequence, optional
        Opaque group identifiers, defaults to ``0..a-1``.
    """

    outcomes: np.ndarray
    covariates: np.ndarray
    group_sizes: tuple
    labels: tuple = None

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise InvalidDataset("outcomes must be an (N, p) array")
        z = np.asarray(self.covariates if self.covariates is not None else np.empty((y.shape[0], 0)), dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        sizes = tuple(int(n) for n in self.group_sizes)
        labels = tuple(self.labels) if self.labels is not None else tuple(range(len(sizes)))

        if len(sizes) < 2:
            raise InvalidDataset(f"need at least 2 groups, got {len(sizes)}")
        if len(labels) != len(sizes) or len(set(labels)) != len(labels):
            raise InvalidDataset("group labels must be distinct and match the number of groups")
        if y.shape[1] < 1:
            raise InvalidDataset("need at least one outcome coordinate")
        if z.shape[0] != y.shape[0] or sum(sizes) != y.shape[0]:
            raise DimensionMismatch(
                f"outcomes have {y.shape[0]} rows, covariates {z.shape[0]}, group sizes sum to {sum(sizes)}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
            raise InvalidDataset("data contain NaN or infinite entries")
        c = z.shape[1]
        for label, n in zip(labels, sizes):
            if n < c + 2:
                raise GroupTooSmall(f"group {label!r} has {n} subjects; need at least c + 2 = {c + 2}")

        # one contiguous column per outcome coordinate: the p regressions share X
        object.__setattr__(self, "outcomes", _frozen(np.asfortranarray(y)))
        object.__setattr__(self, "covariates", _frozen(np.asfortranarray(z)))
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_groups(cls, outcomes, covariates=None, labels=None):
        """Build from per-group arrays ``outcomes[i]`` of shape ``(n_i, p)``."""
        ys = [np.asarray(y, dtype=float) for y in outcomes]
        ys = [y[:, None] if y.ndim == 1 else y for y in ys]
        sizes = [y.shape[0] for y in ys]
        if covariates is None:
            zs = [np.empty((n, 0)) for n in sizes]
        else:
            zs = [np.asarray(z, dtype=float).reshape(n, -1) for z, n in zip(covariates, sizes)]
        return cls(np.vstack(ys), np.vstack(zs), sizes, labels)

    @property
    def a(self):
        return len(self.group_sizes)

    @property
    def p(self):
        return self.outcomes.shape[1]

    @property
    def c(self):
        return self.covariates.shape[1]

    @property
    def n_total(self):
        return self.outcomes.shape[0]

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.group_sizes)])

    @property
    def group_index(self):
        """Group number of every row."""
        return np.repeat(np.arange(self.a), self.group_sizes)

    def group_slice(self, i):
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    def with_outcomes(self, outcomes):
        """Same groups and covariates, new outcome matrix."""
        return Dataset(outcomes, self.covariates, self.group_sizes, self.labels)


def design_matrix(group_sizes, covariates=None):
    """``X = (⊕ 1_{n_i}, Z)`` for the given group sizes."""
    sizes = [int(n) for n in group_sizes]
    n_total = sum(sizes)
    m = np.zeros((n_total, len(sizes)))
    m[np.arange(n_total), np.repeat(np.arange(len(sizes)), sizes)] = 1.0
    if covariates is None:
        return m
    z = np.asarray(covariates, dtype=float).reshape(n_total, -1)
    return np.hstack([m, z])


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """``X`` with its thin QR factorisation and cached leverage values.

    The Kronecker-expanded design ``X ⊗ I_p`` is never formed except through
    :meth:`kron`, which exists for small-instance checks.
    """

    x: np.ndarray
    group_sizes: tuple
    p: int
    q: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    solver: np.ndarray = field(repr=False)
    leverages: np.ndarray = field(repr=False)

    @property
    def a(self):
        return len(self.group_sizes)

    @property
    def c(self):
        return self.x.shape[1] - self.a

    @property
    def n_total(self):
        return self.x.shape[0]

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.group_sizes)])

    def row(self, i, j):
        """Flat row index of subject ``j`` in group ``i``."""
        if not 0 <= i < self.a or not 0 <= j < self.group_sizes[i]:
            raise IndexOutOfRange(f"no subject ({i}, {j}) in a design with group sizes {self.group_sizes}")
        return int(self.offsets[i]) + j

    def subject(self, row):
        """Inverse of :meth:`row`."""
        if not 0 <= row < self.n_total:
            raise IndexOutOfRange(f"row {row} outside 0..{self.n_total - 1}")
        i = int(np.searchsorted(self.offsets, row, side="right") - 1)
        return i, row - int(self.offsets[i])

    def kron(self):
        """Explicit ``X ⊗ I_p`` of shape ``(N p, (a + c) p)``."""
        return np.kron(self.x, np.eye(self.p))

    def coefficients(self, y):
        """Least-squares coefficients for outcome matrices ``y`` of shape ``(..., N, p)``."""
        return self.solver @ y

    def residuals(self, y, coef=None):
        if coef is None:
            coef = self.coefficients(y)
        return y - self.x @ coef


def build_design(dataset):
    """Assemble and factorise the MANCOVA design for ``dataset``.

    Raises
    ------
    RankDeficientDesign
        If the covariates are collinear with each other or with the group
        indicators (smallest singular value below ``1e-10`` times the largest).
    """
    x = design_matrix(dataset.group_sizes, dataset.covariates)
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[-1] < RANK_RTOL * sv[0]:
        raise RankDeficientDesign(
            f"design matrix has numerical rank below {x.shape[1]} "
            f"(singular values {sv[0]:.3g} .. {sv[-1]:.3g})"
        )
    q, r = np.linalg.qr(x)
    solver = solve_triangular(r, q.T)
    if not np.all(np.isfinite(solver)):
        raise NumericalFailure("triangular solve produced non-finite values")
    leverages = np.einsum("ij,ij->i", q, q)
    return DesignMatrices(
        x=_frozen(x),
        group_sizes=tuple(dataset.group_sizes),
        p=dataset.p,
        q=_frozen(q),
        r=_frozen(r),
        solver=_frozen(solver),
        leverages=_frozen(leverages),
    )


def hat_diagonal(design, i, j):
    """Leverage ``x_ij' (X'X)^-1 x_ij`` of subject ``j`` in group ``i``."""
    return float(design.leverages[design.row(i, j)])


@dataclass(frozen=True, eq=False)
class MancovaFit:
    """OLS estimates, residuals and leverages for one dataset."""

    dataset: Dataset
    design: DesignMatrices
    coef: np.ndarray
    residuals: np.ndarray

    @property
    def mu_hat(self):
        """Adjusted means, length ``a * p``."""
        return self.coef[: self.design.a].reshape(-1)

    @property
    def nu_hat(self):
        """Slopes, length ``c * p``; ``nu_hat[w * p + k]`` is covariate ``w`` on outcome ``k``."""
        return self.coef[self.design.a :].reshape(-1)

    @property
    def hat_diagonals(self):
        return self.design.leverages


def fit_ols(dataset, design=None):
    """Fit the common-slope MANCOVA model by least squares.

    The ``p`` outcome coordinates share the design, so the fit is one QR solve
    with ``p`` right-hand sides. Passing a prebuilt ``design`` skips the
    factorisation.
    """
    if design is None:
        design = build_design(dataset)
    elif design.n_total != dataset.n_total or design.group_sizes != tuple(dataset.group_sizes):
        raise DimensionMismatch("design does not belong to this dataset")
    y = dataset.outcomes
    coef = design.coefficients(y)
    if not np.all(np.isfinite(coef)):
        raise NumericalFailure("least-squares solve produced non-finite coefficients")
    resid = y - design.x @ coef
    return MancovaFit(dataset=dataset, design=design, coef=_frozen(coef), residuals=_frozen(resid))
