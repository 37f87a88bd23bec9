"""matens: maximum-entropy ensembles of real-valued time-series matrices.

The package calibrates constraint-based exponential ensembles to observed
matrices (single series or panels of series), samples synthetic data from
them, and runs the downstream pipelines those ensembles support: moment and
KS validation, false-coverage-controlled anomaly scans, correlation-spectrum
comparisons, portfolio construction on noise-cleaned returns, and
value-at-risk estimation with a standard backtest battery.
"""

from . import errors
from .core import (
    DataMatrix,
    MarginConstraints,
    QuantileGrid,
    center_rows,
    compute_margins,
    empirical_quantiles,
    load_matrix,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "DataMatrix",
    "MarginConstraints",
    "QuantileGrid",
    "center_rows",
    "compute_margins",
    "empirical_quantiles",
    "load_matrix",
    "__version__",
]
