"""Exception and warning hierarchy shared by every matens module.

All library errors derive from :class:`MatensError` so callers can catch one
base class at API boundaries.  Warnings derive from :class:`MatensWarning`.
"""

from __future__ import annotations

__all__ = [
    "MatensError",
    "ParseError",
    "EmptyInput",
    "ShapeMismatch",
    "DegenerateRow",
    "InvalidGrid",
    "DegenerateQuantiles",
    "OutOfSupport",
    "DivergentPartition",
    "InfeasibleConstraints",
    "Unconverged",
    "NotCalibrated",
    "OracleTooLarge",
    "InsufficientSample",
    "SingularCorrelation",
    "DegenerateFrontier",
    "DegenerateWindow",
    "MatensWarning",
    "UncenteredDataWarning",
    "ZeroClassificationWarning",
    "DegenerateQuantilesWarning",
    "VacuousTestWarning",
    "InsufficientOverlapWarning",
    "ImputedValuesWarning",
]


class MatensError(Exception):
    """Base class for all matens library errors."""


class ParseError(MatensError):
    """Input text could not be parsed into a numeric matrix."""


class EmptyInput(MatensError):
    """An operation received an empty matrix, series, or window."""


class ShapeMismatch(MatensError):
    """Array arguments have inconsistent shapes."""


class DegenerateRow(MatensError):
    """A row has no observed entries, so a row operation is undefined."""


class InvalidGrid(MatensError):
    """A quantile/bin grid violates its ordering or bounds invariants."""


class DegenerateQuantiles(MatensError):
    """A bin grid contains zero-width bins and cannot support a model."""


class OutOfSupport(MatensError):
    """A value lies outside the support of a bounded bin grid."""


class DivergentPartition(MatensError):
    """Multipliers lie outside the region where the partition sum converges."""


class InfeasibleConstraints(MatensError):
    """Target constraints are mutually inconsistent (no model can match them)."""


class Unconverged(MatensError):
    """An iterative solver exhausted its iteration budget."""


class NotCalibrated(MatensError):
    """An operation requires a calibrated model but got a bare specification."""


class OracleTooLarge(MatensError):
    """The brute-force oracle was asked for a problem above its size guard."""


class InsufficientSample(MatensError):
    """Too few observations to compute the requested statistic."""


class SingularCorrelation(MatensError):
    """A correlation/covariance matrix is singular where an inverse is needed."""


class DegenerateFrontier(MatensError):
    """The mean-variance frontier collapses (e.g. all expected returns equal)."""


class DegenerateWindow(MatensError):
    """A rolling estimation window is degenerate (e.g. all returns equal)."""


class MatensWarning(UserWarning):
    """Base class for all matens library warnings."""


class UncenteredDataWarning(MatensWarning):
    """Data expected to be row-centered appears to carry nonzero row means."""


class ZeroClassificationWarning(MatensWarning):
    """Exact zeros were classified into the positive occupancy class."""


class DegenerateQuantilesWarning(MatensWarning):
    """An estimated quantile grid has zero-width bins (ties in the data)."""


class VacuousTestWarning(MatensWarning):
    """A backtest was passed vacuously (no exceptions to test)."""


class InsufficientOverlapWarning(MatensWarning):
    """Rows were dropped from a correlation because of thin pairwise overlap."""


class ImputedValuesWarning(MatensWarning):
    """Missing entries were replaced by the observed mean before an FFT."""
