"""Hypotheses about adjusted means in projector form.

A contrast hypothesis ``H mu = 0`` is encoded by the orthogonal projector
``T = H'(HH')^+ H`` onto the row space of ``H``; ``T mu = 0`` holds exactly
when ``H mu = 0``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidHypothesis, NumericalFailure
from .linalg import sym_pinv

PINV_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class HypothesisProjector:
    matrix: np.ndarray
    rank: int

    @property
    def dim(self):
        return self.matrix.shape[0]


def validate_contrast(h, dim=None, atol=1e-10):
    """Check that ``h`` is a full-row-rank contrast matrix and return it as float."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    if h.ndim != 2:
        raise InvalidHypothesis("contrast matrix must be two-dimensional")
    if dim is not None and h.shape[1] != dim:
        raise InvalidHypothesis(f"contrast matrix has {h.shape[1]} columns, expected a*p = {dim}")
    if not np.all(np.isfinite(h)):
        raise InvalidHypothesis("contrast matrix has non-finite entries")
    scale = max(1.0, np.abs(h).max())
    if np.abs(h.sum(axis=1)).max() > atol * scale * h.shape[1]:
        raise InvalidHypothesis("rows of a contrast matrix must sum to zero")
    if np.linalg.matrix_rank(h) != h.shape[0]:
        raise InvalidHypothesis("contrast matrix must have full row rank")
    return h


def projector_from_contrast(h):
    """Unique projector ``T = H'(HH')^+ H`` for a contrast matrix ``H``."""
    h = validate_contrast(h)
    inner, _ = sym_pinv(h @ h.T, rtol=PINV_RTOL)
    t = h.T @ inner @ h
    t = (t + t.T) / 2
    if not np.all(np.isfinite(t)):
        raise NumericalFailure("projector has non-finite entries")
    tr = np.trace(t)
    f = int(round(tr))
    if abs(tr - f) > 1e-8:
        raise NumericalFailure(f"projector trace {tr!r} is not integral")
    t.setflags(write=False)
    return HypothesisProjector(matrix=t, rank=f)


def one_way_projector(a, p):
    """``T = (I_a - J_a / a) ⊗ I_p``: equality of all ``a`` adjusted mean vectors."""
    if a < 2 or p < 1:
        raise InvalidHypothesis(f"one-way hypothesis needs a >= 2 and p >= 1, got a={a}, p={p}")
    centering = np.eye(a) - np.full((a, a), 1.0 / a)
    t = np.kron(centering, np.eye(p))
    t.setflags(write=False)
    return HypothesisProjector(matrix=t, rank=(a - 1) * p)


def one_way_contrast(a, p):
    """A full-row-rank contrast for ``mu_1 = ... = mu_a``: consecutive differences."""
    diff = np.eye(a - 1, a) - np.eye(a - 1, a, k=1)
    return np.kron(diff, np.eye(p))
