"""Exception hierarchy.

Data problems (bad input files, too-small groups) derive from
:class:`DataError`; numerical problems (singular matrices, degenerate
variances) derive from :class:`NumericalError`. The CLI maps the two
families to different exit codes.
"""


class MancovaError(Exception):
    """Base class for all package errors."""


class DataError(MancovaError, ValueError):
    pass


class NumericalError(MancovaError, ArithmeticError):
    pass


class InvalidDataset(DataError):
    pass


class GroupTooSmall(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} in column {column!r} at row {row}")


class DimensionMismatch(DataError):
    pass


class InvalidHypothesis(DataError):
    pass


class ConfigParse(DataError):
    def __init__(self, message, field=None):
        self.field = field
        where = f" (at {field})" if field else ""
        super().__init__(f"{message}{where}")


class UnknownScenarioPreset(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IndexOutOfRange(DataError, IndexError):
    pass


class RankDeficientDesign(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class LeverageAtOne(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class SingularCovariance(NumericalError):
    pass


class NotPSD(NumericalError):
    pass
