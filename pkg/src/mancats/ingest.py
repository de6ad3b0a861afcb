"""Reading grouped data and contrast matrices from CSV files.

Input files are UTF-8 with a header row, ``.`` as decimal point and one
row per subject. The group column is read as text; groups keep the order in
which they first appear and rows are regrouped group-major.
"""

import csv
from importlib import resources

import numpy as np

from .errors import InvalidDataset, InvalidHypothesis, MissingColumn, NonNumericCell
from .model import Dataset


def _parse_float(text, row, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise NonNumericCell(row, column, text) from None
    if not np.isfinite(value):
        raise NonNumericCell(row, column, text)
    return value


def read_records(path):
    """Header and data rows of a CSV file; data rows are numbered from 2."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidDataset(f"{path}: file is empty") from None
        rows = [(i, r) for i, r in enumerate(reader, start=2) if any(cell.strip() for cell in r)]
    return header, rows


def dataset_from_records(header, rows, group, outcomes, covariates=()):
    """Build a :class:`Dataset` from parsed CSV rows.

    Parameters
    ----------
    header : list of str
    rows : list of (int, list of str)
        Data rows with their line numbers, as returned by :func:`read_records`.
    group : str
        Name of the categorical group column.
    outcomes, covariates : sequence of str
        Column names for the outcome vector and the covariates.
    """
    outcomes, covariates = list(outcomes), list(covariates)
    names = [group] + outcomes + covariates
    if len(set(names)) != len(names):
        raise InvalidDataset("group, outcome and covariate columns must be distinct")
    if not outcomes:
        raise InvalidDataset("at least one outcome column is required")
    index = {}
    for k, h in enumerate(header):
        index.setdefault(h, k)
    missing = [n for n in names if n not in index]
    if missing:
        raise MissingColumn(f"column(s) not found: {', '.join(missing)}")

    numeric = outcomes + covariates
    by_group = {}
    for line, r in rows:
        if len(r) < len(header):
            r = r + [""] * (len(header) - len(r))
        label = r[index[group]].strip()
        if not label:
            raise InvalidDataset(f"empty group label at row {line}")
        values = [_parse_float(r[index[n]].strip(), line, n) for n in numeric]
        by_group.setdefault(label, []).append(values)
    if not by_group:
        raise InvalidDataset("no data rows")

    labels = list(by_group)
    blocks = [np.asarray(by_group[g], dtype=float).reshape(-1, len(numeric)) for g in labels]
    table = np.vstack(blocks)
    p = len(outcomes)
    return Dataset(table[:, :p], table[:, p:], [b.shape[0] for b in blocks], labels)


def read_dataset(path, group, outcomes, covariates=()):
    """Read a grouped dataset from the CSV file at ``path``."""
    header, rows = read_records(path)
    return dataset_from_records(header, rows, group, outcomes, covariates)


def read_matrix(path):
    """Numeric matrix from a CSV file; a non-numeric first row is taken as a header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if rows:
        try:
            [float(x) for x in rows[0]]
        except ValueError:
            rows = rows[1:]
    if not rows:
        raise InvalidHypothesis(f"{path}: no matrix rows")
    if len({len(r) for r in rows}) != 1:
        raise InvalidHypothesis(f"{path}: rows have different lengths")
    return np.array(
        [[_parse_float(x.strip(), i, j) for j, x in enumerate(r)] for i, r in enumerate(rows, start=1)]
    )


# --- bundled example ---------------------------------------------------------

ROHWER_OUTCOMES = ("PPVT", "SAT")
ROHWER_TASKS = ("n", "s", "ns", "na", "ss")


def rohwer_path():
    """Location of the bundled Rohwer kindergarten data (69 children)."""
    return resources.files("mancats") / "data" / "rohwer.csv"


def load_rohwer(singular=False):
    """Rohwer data as a two-group MANCOVA dataset.

    Groups are socioeconomic status (``Lo`` with 37 and ``Hi`` with 32
    children), outcomes are the PPVT and SAT scores, and the single
    covariate is the sum of the five paired-associate learning tasks. With
    ``singular=True`` a third outcome ``PPVT + SAT`` is appended, which makes
    every group covariance matrix singular.
    """
    with resources.as_file(rohwer_path()) as path:
        header, rows = read_records(path)
    ds = dataset_from_records(header, rows, "SES", ROHWER_OUTCOMES, ROHWER_TASKS)
    z = ds.covariates.sum(axis=1, keepdims=True)
    y = ds.outcomes
    if singular:
        y = np.column_stack([y, y.sum(axis=1)])
    return Dataset(y, z, ds.group_sizes, ds.labels)


def group_residual_covariances(dataset, separate_slopes=True):
    """Descriptive residual covariance matrix of every group, shape ``(a, p, p)``.

    With ``separate_slopes`` each group is regressed on its own intercept and
    covariates and the residual cross-products are divided by ``n_i - c``.
    Otherwise the residuals of the common-slope model are used with divisor
    ``n_i - c - 1``, which is :func:`mancats.covariance.group_sigmas` with
    the HC0 flavor.
    """
    if not separate_slopes:
        from .covariance import HcFlavor, group_sigmas
        from .model import fit_ols

        return group_sigmas(fit_ols(dataset), HcFlavor.HC0)
    out = np.empty((dataset.a, dataset.p, dataset.p))
    for i in range(dataset.a):
        sl = dataset.group_slice(i)
        y = dataset.outcomes[sl]
        x = np.column_stack([np.ones(y.shape[0]), dataset.covariates[sl]])
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        u = y - x @ coef
        out[i] = u.T @ u / (y.shape[0] - dataset.c)
    return out
