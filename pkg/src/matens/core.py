"""Core data structures: observation matrices, bin grids, margin constraints.

Contents
--------
* :class:`DataMatrix` -- an N x T real matrix with an explicit observation
  mask and optional row/column labels; immutable after construction.
* :class:`QuantileGrid` -- a strictly increasing grid of bin edges, possibly
  unbounded at either end.
* :class:`MarginConstraints` -- per-row and per-column occupancy counts and
  cumulative positive/negative values.
* Operations: :func:`load_matrix`, :func:`center_rows`,
  :func:`empirical_quantiles`, :func:`compute_margins`.

Conventions
-----------
Missing cells are carried as ``nan`` in ``values`` with ``mask`` False.
The sign decomposition used throughout the package splits each observed
value into a positive part ``w+ = max(x, 0)`` and a negative part
``w- = max(-x, 0)``; exact zeros are counted in the positive class and
reported via :class:`~matens.errors.ZeroClassificationWarning`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateQuantilesWarning,
    DegenerateRow,
    EmptyInput,
    InvalidGrid,
    ParseError,
    ShapeMismatch,
    UncenteredDataWarning,
    ZeroClassificationWarning,
)

__all__ = [
    "DataMatrix",
    "QuantileGrid",
    "MarginConstraints",
    "load_matrix",
    "center_rows",
    "empirical_quantiles",
    "compute_margins",
]

_MISSING_TOKENS = {"", "na", "nan", "none", "null", "missing"}


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataMatrix:
    """An N x T matrix of real observations with an explicit mask.

    Parameters
    ----------
    values : ndarray, shape (N, T)
        Observed values; entries where ``mask`` is False must be ``nan``.
    mask : ndarray of bool, shape (N, T)
        True where the cell is observed.
    row_ids, col_ids : tuple of str
        Labels; synthesized as ``r0..`` / ``c0..`` when absent.
    row_means : ndarray or None
        Means subtracted by :func:`center_rows`, for the inverse transform.
    """

    values: np.ndarray
    mask: np.ndarray
    row_ids: tuple[str, ...] = ()
    col_ids: tuple[str, ...] = ()
    row_means: np.ndarray | None = None

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeMismatch(f"values must be 2-D, got ndim={values.ndim}")
        n, t = values.shape
        if n == 0 or t == 0:
            raise EmptyInput("matrix must have at least one row and one column")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.array(self.mask, dtype=bool)
        if mask.shape != values.shape:
            raise ShapeMismatch(
                f"mask shape {mask.shape} != values shape {values.shape}"
            )
        if not np.all(np.isfinite(values[mask])):
            raise ParseError("observed cells must be finite")
        values = np.where(mask, values, np.nan)
        row_ids = tuple(self.row_ids) or tuple(f"r{i}" for i in range(n))
        col_ids = tuple(self.col_ids) or tuple(f"c{j}" for j in range(t))
        if len(row_ids) != n or len(col_ids) != t:
            raise ShapeMismatch("label lengths do not match matrix shape")
        means = self.row_means
        if means is not None:
            means = np.array(means, dtype=float)
            if means.shape != (n,):
                raise ShapeMismatch("row_means must have one entry per row")
            means = _freeze(means)
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "mask", _freeze(mask))
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "col_ids", col_ids)
        object.__setattr__(self, "row_means", means)

    # -- basic geometry -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @property
    def has_missing(self) -> bool:
        return not bool(self.mask.all())

    def row_observed(self, i: int) -> np.ndarray:
        """Observed values of row ``i`` as a 1-D array."""
        return self.values[i][self.mask[i]]

    def col_observed(self, t: int) -> np.ndarray:
        return self.values[:, t][self.mask[:, t]]

    def observed_values(self) -> np.ndarray:
        """All observed cells flattened (row-major)."""
        return self.values[self.mask]

    # -- serialization ---------------------------------------------------
    def to_json_dict(self) -> dict:
        vals = [
            [self.values[i, j] if self.mask[i, j] else None for j in range(self.n_cols)]
            for i in range(self.n_rows)
        ]
        out = {
            "row_ids": list(self.row_ids),
            "col_ids": list(self.col_ids),
            "values": vals,
            "mask": self.mask.astype(int).tolist(),
        }
        if self.row_means is not None:
            out["row_means"] = self.row_means.tolist()
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DataMatrix":
        raw = obj["values"]
        values = np.array(
            [[np.nan if v is None else float(v) for v in row] for row in raw],
            dtype=float,
        )
        mask = obj.get("mask")
        mask_arr = np.array(mask, dtype=bool) if mask is not None else np.isfinite(values)
        means = obj.get("row_means")
        return cls(
            values=values,
            mask=mask_arr,
            row_ids=tuple(obj.get("row_ids") or ()),
            col_ids=tuple(obj.get("col_ids") or ()),
            row_means=None if means is None else np.asarray(means, dtype=float),
        )

    def to_csv(self, path: str | Path, missing_token: str = "") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *self.col_ids])
            for i, rid in enumerate(self.row_ids):
                row = [
                    repr(float(self.values[i, j])) if self.mask[i, j] else missing_token
                    for j in range(self.n_cols)
                ]
                w.writerow([rid, *row])


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing bin edges ``q[0] < ... < q[d-1]``.

    ``xi`` carries the probability levels the edges were estimated at (empty
    for hand-built grids).  End edges may be ``-inf`` / ``+inf``; interior
    edges must be finite.  Bins are half-open ``[q[i], q[i+1])`` with the top
    bin closed at a finite upper edge.
    """

    q: tuple[float, ...]
    xi: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        q = tuple(float(v) for v in self.q)
        if len(q) < 2:
            raise InvalidGrid("grid needs at least two edges")
        for lo, hi in zip(q, q[1:]):
            if not lo < hi:
                raise InvalidGrid(f"edges must strictly increase, got {lo} >= {hi}")
        if any(math.isnan(v) for v in q):
            raise InvalidGrid("grid edges cannot be nan")
        if any(math.isinf(v) for v in q[1:-1]):
            raise InvalidGrid("interior edges must be finite")
        xi = tuple(float(v) for v in self.xi)
        if xi:
            if len(xi) != len(q):
                raise InvalidGrid("xi must align with edges")
            for lo, hi in zip(xi, xi[1:]):
                if not lo < hi:
                    raise InvalidGrid("xi must strictly increase")
            if xi[0] < 0.0 or xi[-1] > 1.0:
                raise InvalidGrid("xi must lie in [0, 1]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "xi", xi)

    @property
    def n_bins(self) -> int:
        return len(self.q) - 1

    @property
    def lower_unbounded(self) -> bool:
        return math.isinf(self.q[0])

    @property
    def upper_unbounded(self) -> bool:
        return math.isinf(self.q[-1])

    @property
    def is_bounded(self) -> bool:
        return not (self.lower_unbounded or self.upper_unbounded)

    def edges(self) -> np.ndarray:
        return np.asarray(self.q, dtype=float)

    def bin_bounds(self, i: int) -> tuple[float, float]:
        return self.q[i], self.q[i + 1]

    def bin_index(self, x: np.ndarray | float) -> np.ndarray:
        """Bin index per value; -1 where outside a bounded support."""
        x = np.asarray(x, dtype=float)
        q = self.edges()
        idx = np.searchsorted(q, x, side="right") - 1
        # top edge belongs to the last bin when finite
        idx = np.where(x == q[-1], self.n_bins - 1, idx)
        idx = np.where((x < q[0]) | (x > q[-1]), -1, idx)
        return idx

    def to_json_dict(self) -> dict:
        return {"q": [_edge_out(v) for v in self.q], "xi": list(self.xi)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "QuantileGrid":
        return cls(
            q=tuple(_edge_in(v) for v in obj["q"]),
            xi=tuple(obj.get("xi") or ()),
        )


def _edge_out(v: float) -> float | str:
    if math.isinf(v):
        return "-inf" if v < 0 else "inf"
    return v


def _edge_in(v) -> float:
    if isinstance(v, str):
        return float(v)
    return float(v)


@dataclass(frozen=True)
class MarginConstraints:
    """Row/column occupancy counts and cumulative magnitudes.

    For each row i (and symmetrically each column t):

    * ``n_plus_row[i]``  -- number of observed cells with value >= 0,
    * ``n_minus_row[i]`` -- number of observed cells with value < 0,
    * ``s_plus_row[i]``  -- sum of positive parts ``max(x, 0)``,
    * ``s_minus_row[i]`` -- sum of negative parts ``max(-x, 0)`` (>= 0),
    * ``n_obs_row[i]``   -- number of observed cells.

    Counts are stored as floats so the same container can carry expected
    (real-valued) constraints of a calibrated ensemble; empirically computed
    instances hold exact integers.
    """

    n_plus_row: np.ndarray
    n_minus_row: np.ndarray
    s_plus_row: np.ndarray
    s_minus_row: np.ndarray
    n_obs_row: np.ndarray
    n_plus_col: np.ndarray
    n_minus_col: np.ndarray
    s_plus_col: np.ndarray
    s_minus_col: np.ndarray
    n_obs_col: np.ndarray

    def __post_init__(self) -> None:
        rows = [
            "n_plus_row", "n_minus_row", "s_plus_row", "s_minus_row", "n_obs_row",
        ]
        cols = [
            "n_plus_col", "n_minus_col", "s_plus_col", "s_minus_col", "n_obs_col",
        ]
        n = None
        for name in rows + cols:
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1:
                raise ShapeMismatch(f"{name} must be 1-D")
            object.__setattr__(self, name, _freeze(a))
            if name in rows:
                if n is None:
                    n = a.size
                elif a.size != n:
                    raise ShapeMismatch("row margin arrays must share a length")
        t = self.n_plus_col.size
        for name in cols:
            if getattr(self, name).size != t:
                raise ShapeMismatch("column margin arrays must share a length")
        for name in rows + cols:
            a = getattr(self, name)
            if name.startswith(("n_", "s_")) and np.any(a < -1e-12):
                raise ShapeMismatch(f"{name} must be nonnegative")

    @property
    def n_rows(self) -> int:
        return self.n_plus_row.size

    @property
    def n_cols(self) -> int:
        return self.n_plus_col.size

    def to_json_dict(self) -> dict:
        return {
            name: getattr(self, name).tolist()
            for name in (
                "n_plus_row", "n_minus_row", "s_plus_row", "s_minus_row", "n_obs_row",
                "n_plus_col", "n_minus_col", "s_plus_col", "s_minus_col", "n_obs_col",
            )
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MarginConstraints":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in obj.items()})


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _parse_cell(token: str, where: str) -> float:
    tok = token.strip()
    if tok.lower() in _MISSING_TOKENS:
        return math.nan
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"non-numeric cell {token!r} at {where}") from None


def _is_numeric_or_missing(token: str) -> bool:
    tok = token.strip()
    if tok.lower() in _MISSING_TOKENS:
        return True
    try:
        float(tok)
        return True
    except ValueError:
        return False


def load_matrix(
    source: str | Path | io.TextIOBase,
    *,
    fmt: str | None = None,
    delimiter: str = ",",
    header: bool | None = None,
    index_col: bool | None = None,
) -> DataMatrix:
    """Load a :class:`DataMatrix` from CSV or JSON.

    CSV cells that are empty or spell a missing token (``na``, ``nan``,
    ``null``, ...) become missing cells.  ``header``/``index_col`` default to
    auto-detection: a first row (column) whose entries are not all
    numeric-or-missing is treated as labels.

    Raises
    ------
    ParseError
        On ragged rows or non-numeric payload cells (includes coordinates).
    EmptyInput
        When the source holds no data rows.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        if fmt is None:
            fmt = "json" if path.suffix.lower() == ".json" else "csv"
        text = path.read_text()
    else:
        text = source.read()
        if fmt is None:
            fmt = "json" if text.lstrip()[:1] in ("{", "[") else "csv"

    if fmt == "json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}") from None
        if isinstance(obj, list):
            obj = {"values": obj}
        if "values" not in obj:
            raise ParseError("JSON matrix must carry a 'values' field")
        if not obj["values"]:
            raise EmptyInput("JSON matrix has no rows")
        widths = {len(r) for r in obj["values"]}
        if len(widths) != 1:
            raise ParseError("JSON matrix rows are ragged")
        return DataMatrix.from_json_dict(obj)

    rows = [r for r in csv.reader(io.StringIO(text), delimiter=delimiter) if r]
    if not rows:
        raise EmptyInput("CSV source holds no rows")

    if header is None:
        header = not all(_is_numeric_or_missing(c) for c in rows[0])
    col_ids: tuple[str, ...] = ()
    if header:
        header_row = [c.strip() for c in rows[0]]
        rows = rows[1:]
        if not rows:
            raise EmptyInput("CSV source holds a header but no data rows")
    if index_col is None:
        index_col = not all(_is_numeric_or_missing(r[0]) for r in rows)
    row_ids: tuple[str, ...] = ()
    if index_col:
        row_ids = tuple(r[0].strip() for r in rows)
        rows = [r[1:] for r in rows]
    if header:
        col_ids = tuple(header_row[1:] if index_col else header_row)

    width = len(rows[0])
    if width == 0:
        raise EmptyInput("CSV rows hold no data columns")
    values = np.empty((len(rows), width), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"ragged CSV: row {i} has {len(row)} cells, expected {width}"
            )
        for j, tok in enumerate(row):
            values[i, j] = _parse_cell(tok, f"row {i}, col {j}")
    if col_ids and len(col_ids) != width:
        raise ParseError(
            f"header names {len(col_ids)} columns but rows have {width}"
        )
    return DataMatrix(
        values=values,
        mask=np.isfinite(values),
        row_ids=row_ids,
        col_ids=col_ids,
    )


def center_rows(m: DataMatrix) -> DataMatrix:
    """Subtract each row's observed mean; stores the means for inversion.

    Raises :class:`DegenerateRow` if any row has no observed cells.
    """
    counts = m.mask.sum(axis=1)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise DegenerateRow(f"rows {empty.tolist()} have no observed cells")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        means = np.nanmean(m.values, axis=1)
    centered = m.values - means[:, None]
    return DataMatrix(
        values=np.where(m.mask, centered, np.nan),
        mask=m.mask,
        row_ids=m.row_ids,
        col_ids=m.col_ids,
        row_means=means,
    )


def empirical_quantiles(
    values: Sequence[float] | np.ndarray,
    xi: Sequence[float],
    *,
    unbounded_ends: bool = True,
) -> QuantileGrid:
    """Estimate a quantile grid from a 1-D sample.

    The quantile at level ``p`` interpolates linearly between order
    statistics at fractional rank ``h = (T - 1) * p`` (the convention of
    ``numpy.quantile`` with its default method).  Levels 0 and 1 map to
    ``-inf`` / ``+inf`` when ``unbounded_ends`` is set, otherwise to the
    sample min/max.

    A grid with tied edges (possible under heavy ties in the data) is
    reported via :class:`DegenerateQuantilesWarning`; tied edges are nudged
    apart by a relative epsilon so downstream code sees a valid grid, unless
    every edge coincides, in which case :class:`InvalidGrid` is raised.
    """
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptyInput("no finite values to take quantiles of")
    levels = [float(v) for v in xi]
    if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidGrid("xi must hold at least two strictly increasing levels")
    if levels[0] < 0.0 or levels[-1] > 1.0:
        raise InvalidGrid("xi levels must lie in [0, 1]")

    edges: list[float] = []
    for p in levels:
        if unbounded_ends and p == 0.0:
            edges.append(-math.inf)
        elif unbounded_ends and p == 1.0:
            edges.append(math.inf)
        else:
            edges.append(float(np.quantile(x, p)))

    finite = [e for e in edges if math.isfinite(e)]
    if len(finite) >= 2 and any(
        b <= a for a, b in zip(finite, finite[1:])
    ):
        span = float(x.max() - x.min())
        if span == 0.0:
            warnings.warn(
                "all quantile edges coincide (constant or heavily tied data)",
                DegenerateQuantilesWarning,
                stacklevel=2,
            )
            raise InvalidGrid("quantile grid is fully degenerate (all edges equal)")
        warnings.warn(
            "tied quantile edges were nudged apart; bin statistics on this "
            "grid may be fragile",
            DegenerateQuantilesWarning,
            stacklevel=2,
        )
        eps = 1e-9 * span
        for k in range(1, len(edges)):
            if math.isfinite(edges[k]) and math.isfinite(edges[k - 1]):
                if edges[k] <= edges[k - 1]:
                    edges[k] = edges[k - 1] + eps
    return QuantileGrid(q=tuple(edges), xi=tuple(levels))


def compute_margins(
    m: DataMatrix,
    *,
    expect_centered: bool = True,
) -> MarginConstraints:
    """Row/column occupancy counts and cumulative positive/negative values.

    Exact zeros are classified as positive occupancy (warned).  With
    ``expect_centered`` (default) a warning is emitted when row means are far
    from zero relative to the row scale -- pass ``expect_centered=False``
    when raw, uncentered data is intended.
    """
    v = m.values
    obs = m.mask
    if expect_centered and m.n_observed:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(v, axis=1)
            scale = np.nanstd(v, axis=1)
        rel = np.abs(means) / np.where(scale > 0, scale, 1.0)
        if np.any(rel > 1e-8):
            warnings.warn(
                "rows do not look centered; margins mix sign classes with a "
                "location offset (pass expect_centered=False to silence)",
                UncenteredDataWarning,
                stacklevel=2,
            )
    zeros = obs & (v == 0.0)
    if np.any(zeros):
        warnings.warn(
            f"{int(zeros.sum())} exact zero(s) classified as positive occupancy",
            ZeroClassificationWarning,
            stacklevel=2,
        )
    pos = obs & (v >= 0.0)
    neg = obs & (v < 0.0)
    wp = np.where(pos, v, 0.0)
    wm = np.where(neg, -v, 0.0)
    return MarginConstraints(
        n_plus_row=pos.sum(axis=1).astype(float),
        n_minus_row=neg.sum(axis=1).astype(float),
        s_plus_row=wp.sum(axis=1),
        s_minus_row=wm.sum(axis=1),
        n_obs_row=obs.sum(axis=1).astype(float),
        n_plus_col=pos.sum(axis=0).astype(float),
        n_minus_col=neg.sum(axis=0).astype(float),
        s_plus_col=wp.sum(axis=0),
        s_minus_col=wm.sum(axis=0),
        n_obs_col=obs.sum(axis=0).astype(float),
    )
