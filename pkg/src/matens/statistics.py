"""Validation statistics for calibrated matrix ensembles.

Everything in this module answers one question: does a calibrated
:class:`~matens.multivariate.EnsembleModel` actually look like the data it
was fit to?  The tools fall into four groups:

* **Moment bands** -- :func:`moment_distribution` redraws synthetic matrices
  and builds the replicate distribution of a per-row / per-column / global
  moment, with closed-form counterparts where they exist.
* **Distribution tests** -- :func:`ks_compare` runs a Kolmogorov-Smirnov
  test of empirical values against the model, either two-sample against
  pooled synthetic draws (default) or one-sample against the exact mixture
  CDF of the selected cells.
* **Anomaly flagging** -- :func:`anomaly_scan` selects observed cells outside
  central model intervals and then re-tests them at a widened level chosen so
  the expected fraction of false flags among the selections is controlled
  (two-stage selective confidence intervals).
* **Spectral diagnostics** -- :func:`correlation_spectrum`,
  :func:`ensemble_spectrum`, :func:`mp_density`, :func:`power_spectrum`, and
  :func:`ensemble_power_spectrum` compare cross-correlation eigenvalues and
  periodograms between data and ensemble.

Reproducibility contract: every replicate-based routine derives one child
seed per replicate via ``np.random.SeedSequence(seed).spawn(n_rep)`` and
reduces results in replicate order.  The output is therefore bit-for-bit
identical for a given ``(model, n_rep, seed)`` regardless of the ``threads``
setting.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _sps

from .core import DataMatrix
from .errors import (
    DegenerateRow,
    EmptyInput,
    ImputedValuesWarning,
    InsufficientOverlapWarning,
    InsufficientSample,
    ShapeMismatch,
)
from .multivariate import EnsembleModel

__all__ = [
    "EnsembleDistribution",
    "KSResult",
    "AnomalyInterval",
    "AnomalyReport",
    "SpectrumEnsemble",
    "PowerSpectrum",
    "EnsemblePowerSpectrum",
    "moment_distribution",
    "ks_compare",
    "anomaly_scan",
    "correlation_matrix",
    "correlation_spectrum",
    "mp_edges",
    "mp_density",
    "ensemble_spectrum",
    "power_spectrum",
    "ensemble_power_spectrum",
]

_AXES = ("row", "column", "global")

#: Minimum observed points for each moment to be defined in a replicate.
_MOMENT_MIN_POINTS = {"mean": 1, "variance": 2, "skewness": 3, "kurtosis": 4}


# ---------------------------------------------------------------------------
# replicate machinery
# ---------------------------------------------------------------------------

def _replicate_map(fn, n_rep, seed, threads):
    """Apply ``fn(index, child_seed)`` for each replicate, in index order.

    Child seeds are spawned up front from one ``SeedSequence``, so the
    replicate stream is fixed before any work starts; worker count only
    changes the execution schedule, never the results.
    """
    seeds = np.random.SeedSequence(seed).spawn(n_rep)
    if threads is None or threads <= 1:
        return [fn(k, seeds[k]) for k in range(n_rep)]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, range(n_rep), seeds))


def _moment_of(values: np.ndarray, moment: str) -> float:
    """Sample moment of a 1-D array; NaN when too few points to define it."""
    n = values.size
    if n < _MOMENT_MIN_POINTS[moment]:
        return math.nan
    if moment == "mean":
        return float(np.mean(values))
    if moment == "variance":
        return float(np.var(values, ddof=1))
    d = values - values.mean()
    m2 = float(np.mean(d * d))
    if m2 <= 0.0:
        return math.nan
    if moment == "skewness":
        return float(np.mean(d ** 3)) / m2 ** 1.5
    return float(np.mean(d ** 4)) / m2 ** 2 - 3.0


def _group_values(draw: DataMatrix, axis: str) -> list[np.ndarray]:
    if axis == "row":
        return [draw.row_observed(i) for i in range(draw.shape[0])]
    if axis == "column":
        return [draw.col_observed(t) for t in range(draw.shape[1])]
    return [draw.observed_values()]


@dataclass
class EnsembleDistribution:
    """Replicate distribution of one moment over rows, columns, or the matrix.

    ``samples[g, k]`` is the statistic of target ``g`` in replicate ``k``;
    NaN marks replicates where the target had too few observed points (the
    count per target is in ``n_excluded``).  ``analytic`` carries the exact
    model value of the statistic when a closed form exists (mean, variance)
    and is None otherwise.
    """

    statistic: str
    axis: str
    target_ids: tuple[str, ...]
    samples: np.ndarray
    n_excluded: np.ndarray
    n_rep: int
    analytic: np.ndarray | None = None
    _quantile_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def quantiles(self, level: float) -> np.ndarray:
        """Per-target replicate quantile at ``level``; cached per level."""
        key = float(level)
        if key not in self._quantile_cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                self._quantile_cache[key] = np.nanquantile(self.samples, key, axis=1)
        return self._quantile_cache[key]

    def band(self, lo: float = 0.05, hi: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
        return self.quantiles(lo), self.quantiles(hi)

    def replicate_mean(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.samples, axis=1)

    def replicate_std(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(self.samples, axis=1, ddof=1)

    def coverage_fraction(self, observed, lo: float = 0.05, hi: float = 0.95) -> float:
        """Fraction of observed per-target statistics inside the band."""
        observed = np.asarray(observed, dtype=float)
        if observed.shape != (len(self.target_ids),):
            raise ShapeMismatch("one observed statistic per target is required")
        lo_q, hi_q = self.band(lo, hi)
        ok = np.isfinite(observed) & np.isfinite(lo_q) & np.isfinite(hi_q)
        if not ok.any():
            raise InsufficientSample("no target has a finite statistic and band")
        inside = (observed[ok] >= lo_q[ok]) & (observed[ok] <= hi_q[ok])
        return float(inside.mean())

    def to_json_dict(self) -> dict:
        def _clean(a):
            return [None if not np.isfinite(x) else float(x) for x in a]

        out = {
            "statistic": self.statistic,
            "axis": self.axis,
            "target_ids": list(self.target_ids),
            "n_rep": self.n_rep,
            "n_excluded": [int(x) for x in self.n_excluded],
            "replicate_mean": _clean(self.replicate_mean()),
            "band_05": _clean(self.quantiles(0.05)),
            "band_95": _clean(self.quantiles(0.95)),
        }
        if self.analytic is not None:
            out["analytic"] = _clean(self.analytic)
        return out


def moment_distribution(
    model: EnsembleModel,
    moment: str = "variance",
    axis: str = "row",
    n_rep: int = 200,
    seed=None,
    threads: int = 1,
) -> EnsembleDistribution:
    """Replicate distribution of a sample moment under the ensemble.

    Draws ``n_rep`` synthetic matrices and computes ``moment`` (one of
    ``mean``, ``variance``, ``skewness``, ``kurtosis``) of the observed
    values of each target along ``axis`` (``row``, ``column``, or
    ``global``).  A target whose replicate has too few observed points for
    the moment contributes NaN and is counted in ``n_excluded``.
    """
    if moment not in _MOMENT_MIN_POINTS:
        raise ShapeMismatch(
            f"unknown moment {moment!r}; expected one of {sorted(_MOMENT_MIN_POINTS)}"
        )
    if axis not in _AXES:
        raise ShapeMismatch(f"unknown axis {axis!r}; expected one of {_AXES}")
    if n_rep < 100:
        raise InsufficientSample("at least 100 replicates are required for stable bands")
    n, t = model.shape
    if axis == "row":
        ids = tuple(f"row{i}" for i in range(n))
    elif axis == "column":
        ids = tuple(f"col{j}" for j in range(t))
    else:
        ids = ("global",)

    def one(_, child_seed):
        draw = model.sample(seed=child_seed)
        return [_moment_of(v, moment) for v in _group_values(draw, axis)]

    cols = _replicate_map(one, n_rep, seed, threads)
    samples = np.array(cols, dtype=float).T  # (n_targets, n_rep)
    n_excluded = np.sum(~np.isfinite(samples), axis=1).astype(int)

    analytic = None
    if moment in ("mean", "variance"):
        obs = 1.0 - model.cells.p_missing
        m1 = model.mean_matrix()
        m2 = model.second_moment_matrix()
        if axis == "row":
            w, s1, s2 = obs.sum(axis=1), m1.sum(axis=1), m2.sum(axis=1)
        elif axis == "column":
            w, s1, s2 = obs.sum(axis=0), m1.sum(axis=0), m2.sum(axis=0)
        else:
            w = np.array([obs.sum()])
            s1, s2 = np.array([m1.sum()]), np.array([m2.sum()])
        with np.errstate(divide="ignore", invalid="ignore"):
            mean_g = np.where(w > 0, s1 / np.where(w > 0, w, 1.0), np.nan)
            var_g = np.where(w > 0, s2 / np.where(w > 0, w, 1.0), np.nan) - mean_g ** 2
        analytic = mean_g if moment == "mean" else var_g

    return EnsembleDistribution(
        statistic=moment,
        axis=axis,
        target_ids=ids,
        samples=samples,
        n_excluded=n_excluded,
        n_rep=n_rep,
        analytic=analytic,
    )


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KSResult:
    """Outcome of a Kolmogorov-Smirnov comparison against the model."""

    statistic: float
    p_value: float
    reject: bool
    significance: float
    n_empirical: int
    n_reference: int
    method: str

    def as_tuple(self) -> tuple[float, float, bool]:
        return (self.statistic, self.p_value, self.reject)


def _selection_mask(model: EnsembleModel, axis: str, target: int | None) -> np.ndarray:
    n, t = model.shape
    sel = np.zeros((n, t), dtype=bool)
    if axis == "global":
        sel[:] = True
        return sel
    if target is None:
        raise ShapeMismatch(f"axis {axis!r} requires a target index")
    if axis == "row":
        if not 0 <= target < n:
            raise ShapeMismatch(f"row index {target} outside 0..{n - 1}")
        sel[target, :] = True
    elif axis == "column":
        if not 0 <= target < t:
            raise ShapeMismatch(f"column index {target} outside 0..{t - 1}")
        sel[:, target] = True
    else:
        raise ShapeMismatch(f"unknown axis {axis!r}; expected one of {_AXES}")
    return sel


def _mixture_cdf(model: EnsembleModel, sel: np.ndarray):
    """Exact CDF of an observed value drawn from the selected cells.

    Cells contribute in proportion to their probability of being observed;
    within a cell the value is the two-sided exponential conditional law.
    """
    c = model.cells
    pp = c.p_plus[sel]
    pm = c.p_minus[sel]
    live = (pp + pm) > 0.0
    if not live.any():
        raise InsufficientSample("the model never observes the selected cells")
    pp = pp[live]
    pm = pm[live]
    total = float(pp.sum() + pm.sum())
    lam_p = np.where(pp > 0, c.rate_plus[sel][live], 1.0)
    lam_m = np.where(pm > 0, c.rate_minus[sel][live], 1.0)

    def cdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xn = np.minimum(x, 0.0)[:, None]
        xp = np.maximum(x, 0.0)[:, None]
        low = pm[None, :] * np.exp(lam_m[None, :] * xn)
        high = pm[None, :] + pp[None, :] * -np.expm1(-lam_p[None, :] * xp)
        per_cell = np.where(x[:, None] < 0.0, low, high)
        return per_cell.sum(axis=1) / total

    return cdf


def ks_compare(
    values,
    model: EnsembleModel,
    axis: str = "global",
    target: int | None = None,
    n_rep: int = 100,
    significance: float = 0.01,
    seed=None,
    method: str = "two_sample",
    threads: int = 1,
) -> KSResult:
    """Kolmogorov-Smirnov test of empirical values against the ensemble.

    ``values`` may be a 1-D array of observations or a DataMatrix, in which
    case the observed values of the selected row/column (or the whole
    matrix) are extracted.  The default two-sample method pools the selected
    cells' observed values across ``n_rep`` synthetic draws and applies the
    asymptotic two-sample test; ``method="one_sample"`` instead tests
    against the exact mixture CDF of the selected cells, which needs no
    draws.  ``reject`` is ``p_value < significance``.
    """
    sel = _selection_mask(model, axis, target)
    if isinstance(values, DataMatrix):
        if values.shape != model.shape:
            raise ShapeMismatch("data shape does not match the model")
        emp = values.values[sel & values.mask]
    else:
        emp = np.asarray(values, dtype=float).ravel()
        emp = emp[np.isfinite(emp)]
    if emp.size < 5:
        raise InsufficientSample(
            f"need at least 5 empirical points, got {emp.size}"
        )

    if method == "one_sample":
        cdf = _mixture_cdf(model, sel)
        res = _sps.ks_1samp(emp, cdf)
        n_ref = 0
    elif method == "two_sample":
        def one(_, child_seed):
            draw = model.sample(seed=child_seed)
            return draw.values[sel & draw.mask]

        pools = _replicate_map(one, n_rep, seed, threads)
        pooled = np.concatenate(pools) if pools else np.empty(0)
        if pooled.size < 5:
            raise InsufficientSample(
                f"pooled synthetic sample has only {pooled.size} points"
            )
        res = _sps.ks_2samp(emp, pooled, method="asymp")
        n_ref = int(pooled.size)
    else:
        raise ShapeMismatch(
            f"unknown method {method!r}; expected 'two_sample' or 'one_sample'"
        )
    p = float(res.pvalue)
    return KSResult(
        statistic=float(res.statistic),
        p_value=p,
        reject=bool(p < significance),
        significance=float(significance),
        n_empirical=int(emp.size),
        n_reference=n_ref,
        method=method,
    )


# ---------------------------------------------------------------------------
# anomaly scan with false-coverage control
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnomalyInterval:
    """Adjusted-level compatibility interval reported for one flagged cell."""

    row: int
    col: int
    value: float
    lower: float
    upper: float


@dataclass(frozen=True)
class AnomalyReport:
    """Outcome of a two-stage anomaly scan.

    ``flags`` lists the (row, col) cells whose observed value falls outside
    the interval rebuilt at ``adjusted_level``; the matching intervals are in
    ``intervals`` (a NaN interval marks a cell the model gives zero
    probability of being observed at all, where no value is compatible).
    Flags are always a subset of the stage-one selections.
    """

    coverage_level: float
    fcr_q: float
    n_observed: int
    n_selected: int
    adjusted_level: float
    flags: tuple[tuple[int, int], ...]
    intervals: tuple[AnomalyInterval, ...]

    @property
    def n_flagged(self) -> int:
        return len(self.flags)

    def to_json_dict(self) -> dict:
        def _num(x):
            return None if not np.isfinite(x) else float(x)

        return {
            "coverage_level": self.coverage_level,
            "fcr_q": self.fcr_q,
            "n_observed": self.n_observed,
            "n_selected": self.n_selected,
            "adjusted_level": self.adjusted_level,
            "flags": [list(f) for f in self.flags],
            "intervals": [
                {
                    "row": iv.row,
                    "col": iv.col,
                    "value": iv.value,
                    "lower": _num(iv.lower),
                    "upper": _num(iv.upper),
                }
                for iv in self.intervals
            ],
        }


def _conditional_cdf_grid(model: EnsembleModel, data: DataMatrix) -> np.ndarray:
    """Conditional-on-observed CDF of every observed value, vectorized.

    Returns NaN at missing cells and the sentinel -1.0 where the model
    assigns the cell zero probability of being observed (every value there
    is incompatible).
    """
    c = model.cells
    obs_mass = c.p_plus + c.p_minus
    safe = np.where(obs_mass > 0, obs_mass, 1.0)
    pp = np.where(obs_mass > 0, c.p_plus / safe, 0.0)
    pm = np.where(obs_mass > 0, c.p_minus / safe, 0.0)
    v = np.where(data.mask, data.values, 0.0)
    lam_p = np.where(c.plus_active, c.rate_plus, 1.0)
    lam_m = np.where(c.minus_active, c.rate_minus, 1.0)
    low = pm * np.exp(lam_m * np.minimum(v, 0.0))
    high = pm + pp * -np.expm1(-lam_p * np.maximum(v, 0.0))
    u = np.where(v < 0.0, low, high)
    u = np.where(data.mask, u, np.nan)
    return np.where(data.mask & (obs_mass <= 0.0), -1.0, u)


def anomaly_scan(
    data: DataMatrix,
    model: EnsembleModel,
    coverage: float = 0.95,
    fcr_q: float = 0.05,
) -> AnomalyReport:
    """Flag observed cells incompatible with the model, controlling FCR.

    Stage one selects every observed value strictly outside its cell's
    central ``coverage`` interval (closed-form conditional quantiles).  With
    R selections among m observed cells, stage two rebuilds the selected
    cells' intervals at level ``1 - R * fcr_q / m`` and keeps only the values
    still outside; this bounds the expected fraction of flagged cells whose
    adjusted interval fails to cover a model-typical value by ``fcr_q``.
    """
    if not 0.0 < coverage < 1.0:
        raise ShapeMismatch("coverage must lie strictly between 0 and 1")
    if not 0.0 < fcr_q < 1.0:
        raise ShapeMismatch("fcr_q must lie strictly between 0 and 1")
    if data.shape != model.shape:
        raise ShapeMismatch("data shape does not match the model")
    m_obs = data.n_observed
    if m_obs == 0:
        return AnomalyReport(
            coverage_level=coverage,
            fcr_q=fcr_q,
            n_observed=0,
            n_selected=0,
            adjusted_level=1.0,
            flags=(),
            intervals=(),
        )
    u = _conditional_cdf_grid(model, data)
    tail0 = 0.5 * (1.0 - coverage)
    with np.errstate(invalid="ignore"):
        outside = data.mask & ((u < tail0) | (u > 1.0 - tail0))
    selected = [tuple(int(x) for x in ij) for ij in np.argwhere(outside)]
    n_sel = len(selected)
    if n_sel == 0:
        return AnomalyReport(
            coverage_level=coverage,
            fcr_q=fcr_q,
            n_observed=m_obs,
            n_selected=0,
            adjusted_level=1.0,
            flags=(),
            intervals=(),
        )
    miss = n_sel * fcr_q / m_obs
    adjusted_level = 1.0 - miss
    tail1 = 0.5 * miss
    flags: list[tuple[int, int]] = []
    intervals: list[AnomalyInterval] = []
    for i, t in selected:
        value = float(data.values[i, t])
        if u[i, t] == -1.0:
            flags.append((i, t))
            intervals.append(
                AnomalyInterval(row=i, col=t, value=value, lower=math.nan, upper=math.nan)
            )
            continue
        if not (u[i, t] < tail1 or u[i, t] > 1.0 - tail1):
            continue
        lo, hi = model.cell_conditional_quantile(i, t, np.array([tail1, 1.0 - tail1]))
        flags.append((i, t))
        intervals.append(
            AnomalyInterval(row=i, col=t, value=value, lower=float(lo), upper=float(hi))
        )
    return AnomalyReport(
        coverage_level=coverage,
        fcr_q=fcr_q,
        n_observed=m_obs,
        n_selected=n_sel,
        adjusted_level=adjusted_level,
        flags=tuple(flags),
        intervals=tuple(intervals),
    )


# ---------------------------------------------------------------------------
# correlation spectra
# ---------------------------------------------------------------------------

def _as_values_mask(matrix) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(matrix, DataMatrix):
        return matrix.values, matrix.mask
    values = np.asarray(matrix, dtype=float)
    if values.ndim != 2:
        raise ShapeMismatch("a 2-D matrix is required")
    return values, np.isfinite(values)


def correlation_matrix(
    matrix, min_overlap: int = 10
) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise-complete Pearson correlation of the rows.

    Each pair correlation uses the columns both rows observe.  Rows whose
    overlap with some other row falls below ``min_overlap`` are dropped
    (most-conflicted first) with an :class:`InsufficientOverlapWarning`,
    because a correlation estimated from a handful of points destabilizes
    the whole spectrum.  Returns ``(corr, kept_row_indices)``.
    """
    values, mask = _as_values_mask(matrix)
    n = values.shape[0]
    if n < 2:
        raise InsufficientSample("need at least two rows for a correlation")
    for i in range(n):
        vi = values[i][mask[i]]
        if vi.size == 0:
            raise DegenerateRow(f"row {i} has no observed entries")
        if np.ptp(vi) == 0.0:
            raise DegenerateRow(f"row {i} has zero variance over its observations")

    keep = np.arange(n)
    dropped: list[int] = []
    while True:
        m = mask[keep].astype(float)
        overlap = m @ m.T
        np.fill_diagonal(overlap, np.inf)
        bad = overlap < min_overlap
        if not bad.any():
            break
        if keep.size <= 2:
            raise InsufficientSample(
                f"pairwise overlap below {min_overlap} leaves fewer than two rows"
            )
        involvement = bad.sum(axis=0)
        counts = mask[keep].sum(axis=1)
        order = np.lexsort((np.arange(keep.size), counts, -involvement))
        worst = order[0]
        dropped.append(int(keep[worst]))
        keep = np.delete(keep, worst)
    if dropped:
        warnings.warn(
            f"dropped rows {sorted(dropped)}: fewer than {min_overlap} "
            "overlapping observations with some other row",
            InsufficientOverlapWarning,
            stacklevel=2,
        )

    m = mask[keep].astype(float)
    x = np.where(mask[keep], values[keep], 0.0)
    nij = m @ m.T
    sx = x @ m.T
    sxx = (x * x) @ m.T
    sxy = x @ x.T
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_i = sx / nij
        var_i = sxx / nij - mean_i ** 2
        cov = sxy / nij - mean_i * mean_i.T
        denom = np.sqrt(np.where(var_i > 0, var_i, np.nan) * np.where(var_i.T > 0, var_i.T, np.nan))
        corr = np.where(np.isfinite(denom) & (denom > 0), cov / denom, 0.0)
    corr = np.clip(corr, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 1.0)
    return corr, keep


def correlation_spectrum(matrix, min_overlap: int = 10) -> np.ndarray:
    """Eigenvalues of the rows' Pearson correlation matrix, descending."""
    corr, _ = correlation_matrix(matrix, min_overlap=min_overlap)
    return np.linalg.eigvalsh(corr)[::-1]


def mp_edges(q: float) -> tuple[float, float]:
    """Support edges of the pure-noise eigenvalue density at aspect ratio q."""
    if not 0.0 < q < 1.0:
        raise ShapeMismatch(
            "aspect ratio q = n_rows / n_cols must lie strictly in (0, 1); "
            "wider-than-long matrices are unsupported"
        )
    r = math.sqrt(q)
    return ((1.0 - r) ** 2, (1.0 + r) ** 2)


def mp_density(lam, q: float) -> np.ndarray:
    """Pure-noise (Marchenko-Pastur) eigenvalue density at aspect ratio q.

    ``q = n_rows / n_cols`` must lie strictly in (0, 1).  The density is
    ``sqrt((hi - x)(x - lo)) / (2 pi q x)`` inside the support edges
    ``(1 -/+ sqrt(q))**2`` and exactly zero outside (edges included).
    """
    lo, hi = mp_edges(q)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    inside = (lam > lo) & (lam < hi)
    out = np.zeros_like(lam)
    x = lam[inside]
    out[inside] = np.sqrt((hi - x) * (x - lo)) / (2.0 * math.pi * q * x)
    return out


@dataclass
class SpectrumEnsemble:
    """Correlation spectra of synthetic draws: per-replicate eigenvalues.

    ``eigenvalues`` has one descending-sorted row per usable replicate;
    ``lambda_max`` is its first column. Replicates whose correlation was
    undefined (degenerate or thin-overlap rows) are excluded and counted in
    ``n_failed``.
    """

    eigenvalues: np.ndarray
    lambda_max: np.ndarray
    n_rep: int
    n_failed: int

    def mean_density(self, grid=None, n_points: int = 256) -> tuple[np.ndarray, np.ndarray]:
        """Smoothed mean spectral density over all replicate eigenvalues.

        Gaussian kernel with Silverman bandwidth over the pooled eigenvalues;
        with a single replicate this is just that spectrum's smoothed density.
        """
        pool = self.eigenvalues.ravel()
        kde = _sps.gaussian_kde(pool, bw_method="silverman")
        if grid is None:
            h = pool.std(ddof=1) if pool.size > 1 else 1.0
            grid = np.linspace(pool.min() - 0.5 * h, pool.max() + 0.5 * h, n_points)
        else:
            grid = np.asarray(grid, dtype=float)
        return grid, kde(grid)

    def lambda_max_quantile(self, level: float) -> float:
        return float(np.quantile(self.lambda_max, level))

    def to_json_dict(self) -> dict:
        grid, dens = self.mean_density()
        return {
            "n_rep": self.n_rep,
            "n_failed": self.n_failed,
            "lambda_max": [float(x) for x in self.lambda_max],
            "density_grid": [float(x) for x in grid],
            "density": [float(x) for x in dens],
        }


def ensemble_spectrum(
    model: EnsembleModel,
    n_rep: int = 100,
    seed=None,
    threads: int = 1,
    min_overlap: int = 10,
) -> SpectrumEnsemble:
    """Correlation spectra of ``n_rep`` synthetic draws from the model.

    Each replicate matrix gets the same pairwise-complete treatment as
    :func:`correlation_spectrum`.  A replicate where the spectrum is
    undefined -- or where thin overlap would drop rows and change the
    matrix size -- is excluded and counted in ``n_failed``.
    """
    def one(_, child_seed):
        draw = model.sample(seed=child_seed)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", InsufficientOverlapWarning)
                return correlation_spectrum(draw, min_overlap=min_overlap)
        except (DegenerateRow, InsufficientSample, InsufficientOverlapWarning):
            return None

    spectra = _replicate_map(one, n_rep, seed, threads)
    used = [s for s in spectra if s is not None]
    if not used:
        raise InsufficientSample("every replicate produced a degenerate correlation")
    eigs = np.vstack(used)
    return SpectrumEnsemble(
        eigenvalues=eigs,
        lambda_max=eigs[:, 0].copy(),
        n_rep=n_rep,
        n_failed=n_rep - len(used),
    )


# ---------------------------------------------------------------------------
# periodograms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerSpectrum:
    """Two-sided periodogram: |DFT|^2 / T at the Fourier frequencies.

    The series is mean-centered first, so the zero-frequency bin vanishes
    and the bins sum to (population) variance times length.
    """

    frequencies: np.ndarray
    power: np.ndarray

    def peak_frequency(self) -> float:
        """Frequency of the largest nonzero-frequency bin (cycles/step)."""
        k = 1 + int(np.argmax(self.power[1:]))
        return float(self.frequencies[k])


def _periodogram(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    f = np.fft.fft(x)
    return (f.real ** 2 + f.imag ** 2) / x.size


def power_spectrum(series) -> PowerSpectrum:
    """Periodogram of one series; missing entries are mean-imputed with a warning."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("cannot take the spectrum of an empty series")
    obs = np.isfinite(x)
    if not obs.any():
        raise EmptyInput("the series has no observed entries")
    if not obs.all():
        warnings.warn(
            f"mean-imputed {int((~obs).sum())} missing entries before the FFT",
            ImputedValuesWarning,
            stacklevel=2,
        )
        x = np.where(obs, x, x[obs].mean())
    t = x.size
    return PowerSpectrum(frequencies=np.arange(t) / t, power=_periodogram(x))


@dataclass(frozen=True)
class EnsemblePowerSpectrum:
    """Mean periodogram of one row across synthetic draws."""

    frequencies: np.ndarray
    mean_power: np.ndarray
    n_used: int
    n_failed: int

    def peak_frequency(self) -> float:
        k = 1 + int(np.argmax(self.mean_power[1:]))
        return float(self.frequencies[k])


def ensemble_power_spectrum(
    model: EnsembleModel,
    row: int,
    n_rep: int = 100,
    seed=None,
    threads: int = 1,
) -> EnsemblePowerSpectrum:
    """Average periodogram of row ``row`` over ``n_rep`` synthetic draws.

    Missing entries inside a draw are mean-imputed silently (the imputation
    warning is for user data, not for the ensemble's own missingness); a
    replicate where the row is entirely missing or constant is excluded and
    counted in ``n_failed``.
    """
    n, t = model.shape
    if not 0 <= row < n:
        raise ShapeMismatch(f"row index {row} outside 0..{n - 1}")

    def one(_, child_seed):
        draw = model.sample(seed=child_seed)
        x = draw.values[row]
        obs = np.isfinite(x)
        if not obs.any():
            return None
        x = np.where(obs, x, x[obs].mean())
        if np.ptp(x) == 0.0:
            return None
        return _periodogram(x)

    powers = _replicate_map(one, n_rep, seed, threads)
    used = [p for p in powers if p is not None]
    if not used:
        raise InsufficientSample("every replicate left the row empty or constant")
    mean_power = np.mean(np.vstack(used), axis=0)
    return EnsemblePowerSpectrum(
        frequencies=np.arange(t) / t,
        mean_power=mean_power,
        n_used=len(used),
        n_failed=n_rep - len(used),
    )
