"""Symmetric pseudoinverse and PSD square root helpers.

Both functions accept stacks of matrices (shape ``(..., m, m)``) so the
bootstrap engine can invert one projected matrix per replicate in a single
call.
"""

import numpy as np

from .errors import NotPSD, NumericalFailure


def sym_pinv(a, rtol=1e-10):
    """Moore-Penrose inverse of symmetric PSD matrices via ``eigh``.

    Eigenvalues at or below ``rtol * max(eigenvalue)`` are treated as zero.

    Parameters
    ----------
    a : ndarray, shape (..., m, m)
        Symmetric matrices. Only the lower triangle is read.
    rtol : float
        Relative cutoff.

    Returns
    -------
    pinv : ndarray, shape (..., m, m)
    rank : ndarray of int, shape (...)
        Number of retained eigenvalues for each matrix.
    """
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("pseudoinverse of a matrix with non-finite entries")
    w, v = np.linalg.eigh(a)
    wmax = np.max(np.abs(w), axis=-1, keepdims=True)
    keep = w > rtol * wmax
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    pinv = (v * inv_w[..., None, :]) @ np.swapaxes(v, -1, -2)
    return pinv, keep.sum(axis=-1)


def psd_sqrt(a, tol=1e-8, zero_rtol=1e-12):
    """Symmetric square root of a PSD matrix, singular matrices included.

    Negative eigenvalues are clamped to zero as long as their magnitude is
    below ``tol * max(eigenvalue)``; larger ones raise :class:`NotPSD`.
    Eigenvalues below ``zero_rtol * max(eigenvalue)`` are rounding noise of
    a singular matrix and are set to zero as well, so that the root maps
    into the range of ``a`` only.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("psd_sqrt expects a square matrix")
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise NotPSD("matrix is not symmetric")
    w, v = np.linalg.eigh((a + a.T) / 2)
    wmax = max(w.max(), 0.0)
    if w.min() < -tol * wmax or (wmax == 0.0 and w.min() < 0.0):
        raise NotPSD(f"eigenvalue {w.min():.3g} is negative beyond tolerance (max {wmax:.3g})")
    w = np.where(w > zero_rtol * wmax, w, 0.0)
    return (v * np.sqrt(w)) @ v.T
