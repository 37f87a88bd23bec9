"""Financial applications of matrix ensembles.

Four pipelines live here:

* **Detrending** -- subtract the calibrated per-cell expected value from a
  return matrix (:func:`detrend`), the ensemble analogue of removing a
  market mode.
* **Portfolio selection** -- closed-form minimum-variance weights under a
  budget and a target-return constraint (:func:`markowitz_weights`), with
  mean-reversion expected returns, plus a rolling in-sample/out-of-sample
  evaluation harness (:func:`out_of_sample_eval`).
* **Value-at-risk models** -- a quartile-bin univariate estimator (M1) and
  two circulant-embedding ensemble estimators (M2/M3) that wrap one return
  window into a structured matrix with a single free perturbation cell and
  read VaR off the pooled conditional distribution of that cell
  (:func:`circulant_embed`, :func:`var_estimate`, :func:`rolling_var`).
* **Backtesting** -- the eight standard exception-count and exception-timing
  tests with a fixed 5% significance (:func:`backtest_suite`).

Sign convention: VaR is reported as a (negative) return quantile and an
exception is a realized return strictly below it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy
from scipy.stats import binom as _binom
from scipy.stats import chi2 as _chi2
from scipy.stats import norm as _norm

from .calibration import CalibrationOptions, calibrate, fit_univariate
from .core import DataMatrix, compute_margins
from .errors import (
    DegenerateFrontier,
    DegenerateRow,
    DegenerateWindow,
    EmptyInput,
    InsufficientSample,
    MatensError,
    ShapeMismatch,
    SingularCorrelation,
    VacuousTestWarning,
    ZeroClassificationWarning,
)
from .multivariate import ConstraintSpec, EnsembleModel

__all__ = [
    "PortfolioSolution",
    "VarModelSpec",
    "TestOutcome",
    "BacktestReport",
    "OutOfSampleTables",
    "RollingVarResult",
    "detrend",
    "markowitz_weights",
    "out_of_sample_eval",
    "circulant_embed",
    "var_estimate",
    "rolling_var",
    "backtest_suite",
]


# ---------------------------------------------------------------------------
# detrending
# ---------------------------------------------------------------------------

def detrend(data: DataMatrix, model: EnsembleModel) -> DataMatrix:
    """Subtract each cell's model expectation from the observed matrix.

    The expectation is the unconditional per-cell mean (missing counts as
    zero), so a symmetric model detrends by nothing.  Missing cells stay
    missing; labels and stored row means carry over.
    """
    if data.shape != model.shape:
        raise ShapeMismatch("data shape does not match the model")
    expected = model.mean_matrix()
    values = np.where(data.mask, data.values - expected, np.nan)
    return DataMatrix(
        values=values,
        mask=data.mask.copy(),
        row_ids=data.row_ids,
        col_ids=data.col_ids,
        row_means=data.row_means,
    )


# ---------------------------------------------------------------------------
# portfolio selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PortfolioSolution:
    """Fully invested minimum-variance weights hitting a target return."""

    weights: np.ndarray
    target_return: float
    in_sample_variance: float
    window: tuple[int, int]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if abs(w.sum() - 1.0) > 1e-10:
            raise ShapeMismatch("portfolio weights must sum to one")


def _correlation_of_window(window: np.ndarray) -> np.ndarray:
    n, t = window.shape
    if n >= t:
        raise SingularCorrelation(
            f"correlation of {n} assets needs more than {n} observations "
            f"(got {t}); the matrix cannot be inverted"
        )
    stds = window.std(axis=1)
    dead = np.nonzero(stds == 0.0)[0]
    if dead.size:
        raise DegenerateRow(f"asset rows {dead.tolist()} have zero variance")
    return np.corrcoef(window)


def markowitz_weights(
    window,
    target_return: float | None = None,
    window_bounds: tuple[int, int] | None = None,
) -> PortfolioSolution:
    """Closed-form fully invested weights with minimum correlation risk.

    Expected returns follow the mean-reversion rule: minus the last
    in-sample return of each asset.  With budget and return constraints the
    solution is ``C^{-1} (l * 1 + g * mu_vec)`` where ``l`` and ``g`` come
    from the two-by-two system in ``a = 1' C^{-1} 1``, ``b = 1' C^{-1} mu``,
    ``c = mu' C^{-1} mu``.  When every expected return is identical the
    frontier collapses; if the target agrees with that common value the
    global minimum-variance portfolio is returned, otherwise no portfolio
    can reach the target and :class:`DegenerateFrontier` is raised.
    """
    if isinstance(window, DataMatrix):
        if window.has_missing:
            raise ShapeMismatch("portfolio selection needs complete return histories")
        window = window.values
    window = np.asarray(window, dtype=float)
    if window.ndim != 2:
        raise ShapeMismatch("a 2-D (assets x days) window is required")
    n, t = window.shape
    corr = _correlation_of_window(window)
    mu_vec = -window[:, -1]
    try:
        inv_one = np.linalg.solve(corr, np.ones(n))
        inv_mu = np.linalg.solve(corr, mu_vec)
    except np.linalg.LinAlgError as exc:
        raise SingularCorrelation("correlation matrix is singular") from exc
    if not (np.all(np.isfinite(inv_one)) and np.all(np.isfinite(inv_mu))):
        raise SingularCorrelation("correlation matrix is numerically singular")
    a = float(np.ones(n) @ inv_one)
    b = float(np.ones(n) @ inv_mu)
    c = float(mu_vec @ inv_mu)
    if target_return is None:
        target_return = float(mu_vec.mean())
    det = a * c - b * b
    if det <= 1e-10 * max(abs(a * c), 1.0):
        # the frontier is a single point at return b / a
        if abs(target_return - b / a) <= 1e-8 * max(1.0, abs(b / a)):
            weights = inv_one / a
        else:
            raise DegenerateFrontier(
                "all expected returns coincide; only the minimum-variance "
                "portfolio's return is attainable"
            )
    else:
        ell = (c - b * target_return) / det
        gee = (a * target_return - b) / det
        weights = ell * inv_one + gee * inv_mu
        # one step of iterative refinement on the two-constraint system
        gram = np.array([[a, b], [b, c]])
        resid = np.array([weights.sum() - 1.0, weights @ mu_vec - target_return])
        try:
            delta = np.linalg.solve(gram, -resid)
            weights = weights + delta[0] * inv_one + delta[1] * inv_mu
        except np.linalg.LinAlgError:
            pass
        if (
            abs(weights.sum() - 1.0) > 1e-10
            or abs(weights @ mu_vec - target_return)
            > 1e-8 * max(1.0, abs(target_return))
        ):
            raise DegenerateFrontier(
                "the frontier system is too ill-conditioned to satisfy the "
                "budget and return constraints"
            )
    port = weights @ window
    bounds = window_bounds if window_bounds is not None else (0, t)
    return PortfolioSolution(
        weights=weights,
        target_return=float(target_return),
        in_sample_variance=float(np.var(port, ddof=1)),
        window=bounds,
    )


@dataclass(frozen=True)
class OutOfSampleTables:
    """Aggregated rolling-window evaluation: one row per (size, q) pair."""

    risk_table: tuple[dict, ...]
    sharpe_table: tuple[dict, ...]
    horizon: int
    detrended: bool

    def to_json_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "detrended": self.detrended,
            "risk": [dict(r) for r in self.risk_table],
            "sharpe": [dict(r) for r in self.sharpe_table],
        }


def _detrended_window(window: np.ndarray, options: CalibrationOptions):
    """Calibrate an ensemble on one complete window and subtract its means.

    Returns the detrended window, or the raw one (flagged) when the window
    cannot support a calibrated model.
    """
    n, t = window.shape
    dm = DataMatrix(values=window, mask=np.ones((n, t), dtype=bool))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroClassificationWarning)
            margins = compute_margins(dm, expect_centered=False)
        spec = ConstraintSpec(
            variant="no_missing",
            families=("alpha", "gamma", "sigma"),
            n_rows=n,
            n_cols=t,
        )
        model, result = calibrate(spec, margins, options)
        if not result.converged:
            return window, False
        return detrend(dm, model).values, True
    except MatensError:
        return window, False


def _aggregate(values: list[float | None]) -> dict:
    finite = np.array([v for v in values if v is not None], dtype=float)
    if finite.size == 0:
        return {"mean": None, "band_lo": None, "band_hi": None}
    return {
        "mean": float(finite.mean()),
        "band_lo": float(np.quantile(finite, 0.05)),
        "band_hi": float(np.quantile(finite, 0.95)),
    }


def out_of_sample_eval(
    returns,
    portfolio_sizes,
    q_ratios,
    horizon: int = 30,
    detrend: bool = False,
    seed=None,
    options: CalibrationOptions | None = None,
) -> OutOfSampleTables:
    """Rolling paired in-sample/out-of-sample portfolio evaluation.

    For each portfolio size P and aspect ratio q the return history is cut
    into non-overlapping (in-sample, ``horizon``-day out-of-sample) pairs
    with in-sample length ``round(P / q)``.  Each window draws P random
    assets (the draw depends only on ``seed``, never on ``detrend``, so runs
    differing only in that flag evaluate identical windows), builds weights
    on the in-sample block -- optionally detrended by a freshly calibrated
    ensemble; out-of-sample returns stay raw -- and realizes variance and
    mean/variance Sharpe over the out-of-sample block.  Windows where the
    weight problem is degenerate fall back to equal weights and are counted
    in ``n_degenerate``; zero realized variance reports a null Sharpe.
    """
    if isinstance(returns, DataMatrix):
        if returns.has_missing:
            raise ShapeMismatch("evaluation needs complete return histories")
        returns = returns.values
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 2:
        raise ShapeMismatch("a 2-D (assets x days) return history is required")
    n_all, t_all = returns.shape
    opts = options or CalibrationOptions(tol_rel=1e-6, max_iter=2000)
    rng = np.random.default_rng(seed)
    risk_rows: list[dict] = []
    sharpe_rows: list[dict] = []
    for size in portfolio_sizes:
        size = int(size)
        if size < 2 or size > n_all:
            raise ShapeMismatch(
                f"portfolio size {size} outside 2..{n_all} available assets"
            )
        for q in q_ratios:
            q = float(q)
            if not 0.0 < q < 1.0:
                raise ShapeMismatch("aspect ratio q must lie strictly in (0, 1)")
            t_in = int(round(size / q))
            step = t_in + horizon
            n_windows = t_all // step
            if n_windows < 2:
                raise InsufficientSample(
                    f"history of {t_all} days holds {n_windows} windows of "
                    f"{step} days; at least 2 are required"
                )
            risks: list[float | None] = []
            sharpes: list[float | None] = []
            n_degenerate = 0
            for w in range(n_windows):
                start = w * step
                mid = start + t_in
                assets = np.sort(rng.choice(n_all, size=size, replace=False))
                window = returns[assets, start:mid]
                used = window
                if detrend:
                    used, ok = _detrended_window(window, opts)
                    if not ok:
                        n_degenerate += 1
                try:
                    solution = markowitz_weights(used, window_bounds=(start, mid))
                    weights = solution.weights
                except (SingularCorrelation, DegenerateFrontier, DegenerateRow):
                    weights = np.full(size, 1.0 / size)
                    n_degenerate += 1
                oos = weights @ returns[assets, mid:mid + horizon]
                risk = float(np.var(oos, ddof=1))
                risks.append(risk)
                sharpes.append(float(oos.mean() / risk) if risk > 0.0 else None)
            base = {
                "portfolio_size": size,
                "q": q,
                "in_sample_days": t_in,
                "n_windows": n_windows,
                "n_degenerate": n_degenerate,
            }
            risk_rows.append({**base, **_aggregate(risks)})
            sharpe_rows.append({**base, **_aggregate(sharpes)})
    return OutOfSampleTables(
        risk_table=tuple(risk_rows),
        sharpe_table=tuple(sharpe_rows),
        horizon=horizon,
        detrended=bool(detrend),
    )


# ---------------------------------------------------------------------------
# circulant embedding and VaR models
# ---------------------------------------------------------------------------

def circulant_embed(returns, l1: int, l2: int, epsilon: float) -> DataMatrix:
    """Wrap one return window into a diagonal-constant matrix plus one slot.

    The output has shape ``(l1, l2 + 1)`` and cell ``(k, j)`` holds return
    number ``l1 - k + j`` (1-based); the single index overflowing the window
    -- the top-right corner -- holds ``epsilon``.  Every return appears on a
    full diagonal, so row and column margins tie neighboring windows of the
    series together.
    """
    r = np.asarray(returns, dtype=float).ravel()
    tau = l1 + l2 - 1
    if l1 < 1 or l2 < 1:
        raise ShapeMismatch("circulant shape needs positive dimensions")
    if r.size != tau:
        raise ShapeMismatch(
            f"window of {r.size} returns does not fill an ({l1}, {l2}) "
            f"embedding, which needs {tau}"
        )
    if not np.all(np.isfinite(r)):
        raise ShapeMismatch("the return window must be fully observed")
    k = np.arange(l1)[:, None]
    j = np.arange(l2 + 1)[None, :]
    m = l1 - k + j  # 1-based return index; == tau + 1 only at (0, l2)
    values = np.where(m <= tau, r[np.minimum(m, tau) - 1], float(epsilon))
    return DataMatrix(values=values, mask=np.ones((l1, l2 + 1), dtype=bool))


@dataclass(frozen=True)
class VarModelSpec:
    """Which VaR estimator to run and at what geometry.

    M1 is the quartile-bin univariate model (cumulative sums per bin plus a
    shared variance constraint, 4 multipliers on the default grid).  M2 and
    M3 embed the window in a circulant matrix with one perturbation cell
    valued at plus/minus the smallest absolute return; M2 constrains signed
    magnitude sums per row and constrained column, M3 adds sign counts.
    """

    kind: str
    window: int = 150
    shape: tuple[int, int] = (25, 126)
    var_level: float = 0.95
    epsilon_rule: str = "plus_minus_min_abs"

    def __post_init__(self) -> None:
        if self.kind not in ("M1", "M2", "M3"):
            raise ShapeMismatch(f"unknown VaR model kind {self.kind!r}")
        if not 0.0 < self.var_level < 1.0:
            raise ShapeMismatch("var_level must lie strictly in (0, 1)")
        if self.window < 4:
            raise ShapeMismatch("a VaR window needs at least 4 returns")
        if self.epsilon_rule != "plus_minus_min_abs":
            raise ShapeMismatch(
                "only the plus/minus smallest absolute return rule is supported"
            )
        l1, l2 = self.shape
        if self.kind in ("M2", "M3") and l1 + l2 - 1 != self.window:
            raise ShapeMismatch(
                f"circulant shape {self.shape} embeds {l1 + l2 - 1} returns, "
                f"not the window of {self.window}"
            )

    def declared_constraints(self) -> int:
        """Number of free multipliers the estimator declares."""
        l1, l2 = self.shape
        if self.kind == "M1":
            return 4
        per_family = l1 + l2  # rows plus constrained columns
        return per_family * (2 if self.kind == "M2" else 3)

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": self.window,
            "shape": list(self.shape),
            "var_level": self.var_level,
            "epsilon_rule": self.epsilon_rule,
        }


class _VarEngine:
    """VaR estimator with per-sign warm starts across rolling windows."""

    def __init__(self, spec: VarModelSpec, options: CalibrationOptions | None = None):
        self.spec = spec
        self.options = options or CalibrationOptions(tol_rel=1e-6, max_iter=4000)
        self._warm: dict[str, object] = {}

    def _constraint_spec(self) -> ConstraintSpec:
        l1, l2 = self.spec.shape
        constrained = np.ones(l2 + 1, dtype=bool)
        constrained[l2] = False  # the perturbation column stays free
        families = ("gamma", "sigma") if self.spec.kind == "M2" else (
            "alpha", "gamma", "sigma"
        )
        return ConstraintSpec(
            variant="no_missing",
            families=families,
            n_rows=l1,
            n_cols=l2 + 1,
            constrained_cols=constrained,
        )

    def estimate(self, window, level: float | None = None) -> float:
        window = np.asarray(window, dtype=float).ravel()
        if window.size != self.spec.window:
            raise ShapeMismatch(
                f"window of {window.size} returns; the spec expects {self.spec.window}"
            )
        if not np.all(np.isfinite(window)):
            raise ShapeMismatch("the return window must be fully observed")
        if np.ptp(window) == 0.0:
            raise DegenerateWindow("all returns in the window are equal")
        if level is None:
            level = 1.0 - self.spec.var_level
        if self.spec.kind == "M1":
            model, result = fit_univariate(
                window, (0.0, 0.25, 0.5, 0.75, 1.0), "SUMVAR", self.options
            )
            return float(model.quantile(level)[0])
        eps = float(np.min(np.abs(window)))
        l1, l2 = self.spec.shape
        cspec = self._constraint_spec()
        models = []
        for sign, e in (("plus", eps), ("minus", -eps)):
            embedded = circulant_embed(window, l1, l2, e)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ZeroClassificationWarning)
                margins = compute_margins(embedded, expect_centered=False)
            model, result = calibrate(
                cspec, margins, self.options, initial=self._warm.get(sign)
            )
            self._warm[sign] = model.multipliers
            models.append(model)
        return _pooled_cell_quantile(models, 0, l2, level)


def _pooled_cell_quantile(models, i: int, t: int, level: float) -> float:
    """Quantile of the equal-weight mixture of one cell's conditional laws."""
    qs = [float(m.cell_conditional_quantile(i, t, np.array([level]))[0]) for m in models]
    lo, hi = min(qs), max(qs)
    if hi - lo <= 1e-15 * max(1.0, abs(lo)):
        return 0.5 * (qs[0] + qs[-1])

    def gap(x):
        u = [float(m.cell_conditional_cdf(i, t, np.array([x]))[0]) for m in models]
        return sum(u) / len(u) - level

    return float(brentq(gap, lo, hi, xtol=1e-12))


def var_estimate(window, spec: VarModelSpec, seed=None) -> float:
    """Value-at-risk of one window under the chosen estimator.

    Returns the (1 - var_level) return quantile -- a negative number for any
    reasonable window.  ``seed`` is accepted for interface stability; the
    estimators are closed-form quantiles of calibrated models and draw
    nothing.
    """
    return _VarEngine(spec).estimate(window)


@dataclass(frozen=True)
class RollingVarResult:
    """Day-by-day VaR estimates and realized exceptions."""

    start: int
    var: np.ndarray
    exceptions: np.ndarray

    @property
    def n_exceptions(self) -> int:
        return int(self.exceptions.sum())


def rolling_var(
    returns,
    spec: VarModelSpec,
    options: CalibrationOptions | None = None,
) -> RollingVarResult:
    """Estimate VaR for every day after the first full window.

    Day ``t`` (for ``t >= spec.window``) uses the window of the preceding
    ``spec.window`` returns; its exception flag is ``returns[t] < var[t]``.
    The ensemble estimators reuse the previous day's multipliers as warm
    starts, which is what makes long backtests affordable.
    """
    r = np.asarray(returns, dtype=float).ravel()
    tau = spec.window
    if r.size <= tau:
        raise InsufficientSample(
            f"{r.size} returns cannot cover one {tau}-day window plus a test day"
        )
    engine = _VarEngine(spec, options)
    n_eval = r.size - tau
    var = np.empty(n_eval)
    for k in range(n_eval):
        var[k] = engine.estimate(r[k:k + tau])
    return RollingVarResult(start=tau, var=var, exceptions=r[tau:] < var)


# ---------------------------------------------------------------------------
# backtests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestOutcome:
    """One backtest's verdict; vacuous means it had nothing to test."""

    statistic: float | None
    p_value: float | None
    zone: str | None
    passed: bool
    vacuous: bool = False

    def to_json_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "zone": self.zone,
            "passed": self.passed,
            "vacuous": self.vacuous,
        }


@dataclass(frozen=True)
class BacktestReport:
    """All eight exception backtests of one VaR series."""

    alpha: float
    significance: float
    n_obs: int
    exception_count: int
    tests: dict

    @property
    def n_passed(self) -> int:
        return sum(1 for t in self.tests.values() if t.passed)

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "significance": self.significance,
            "n_obs": self.n_obs,
            "exception_count": self.exception_count,
            "n_passed": self.n_passed,
            "tests": {k: v.to_json_dict() for k, v in self.tests.items()},
        }


def _gap_likelihood_ratio(v: int, p: float) -> float:
    """Kupiec likelihood ratio of one inter-exception gap of length v."""
    null = math.log(p) + (v - 1) * math.log1p(-p)
    alt = -math.log(v) + float(xlogy(v - 1, 1.0 - 1.0 / v))
    return 2.0 * (alt - null)


def backtest_suite(exceptions, alpha: float, significance: float = 0.05) -> BacktestReport:
    """Run the eight standard VaR exception backtests.

    ``exceptions`` is the day-by-day boolean exception series of a VaR
    model at level ``alpha`` (so the nominal exception probability is
    ``1 - alpha``).  Pass means fail-to-reject at ``significance``; the
    traffic-light test passes in its green and yellow zones.  Tests that
    need an exception to exist (time-to-first-failure and the gap tests)
    pass vacuously on a clean series, with a flag and a warning.
    """
    e = np.asarray(exceptions, dtype=bool).ravel()
    n = e.size
    if n == 0:
        raise EmptyInput("an empty exception series cannot be backtested")
    if n < 30:
        raise InsufficientSample(f"backtests need at least 30 observations, got {n}")
    if not 0.0 < alpha < 1.0:
        raise ShapeMismatch("alpha must lie strictly in (0, 1)")
    p = 1.0 - alpha
    x = int(e.sum())
    tests: dict[str, TestOutcome] = {}

    # Traffic light: Basel zones from the cumulative binomial count.
    cdf = float(_binom.cdf(x, n, p))
    zone = "green" if cdf <= 0.95 else ("yellow" if cdf < 0.9999 else "red")
    tests["TrafficLight"] = TestOutcome(
        statistic=cdf, p_value=None, zone=zone, passed=zone != "red"
    )

    # Binomial: two-sided normal approximation on the count.
    z = (x - n * p) / math.sqrt(n * p * (1.0 - p))
    pv = 2.0 * float(_norm.sf(abs(z)))
    tests["Binomial"] = TestOutcome(
        statistic=z, p_value=pv, zone=None, passed=pv >= significance
    )

    # POF: likelihood ratio on the exception frequency.
    pi_hat = x / n
    lr_pof = 2.0 * (
        float(xlogy(n - x, 1.0 - pi_hat)) + float(xlogy(x, pi_hat))
        - float(xlogy(n - x, 1.0 - p)) - float(xlogy(x, p))
    )
    pv = float(_chi2.sf(lr_pof, 1))
    tests["POF"] = TestOutcome(
        statistic=lr_pof, p_value=pv, zone=None, passed=pv >= significance
    )

    positions = np.nonzero(e)[0]

    # TUFF: likelihood ratio on the time until the first exception.
    if x == 0:
        tests["TUFF"] = TestOutcome(
            statistic=None, p_value=None, zone=None, passed=True, vacuous=True
        )
    else:
        v = int(positions[0]) + 1
        lr = _gap_likelihood_ratio(v, p)
        pv = float(_chi2.sf(lr, 1))
        tests["TUFF"] = TestOutcome(
            statistic=lr, p_value=pv, zone=None, passed=pv >= significance
        )

    # CCI: first-order Markov independence of the exception indicator.
    prev = e[:-1]
    curr = e[1:]
    n00 = int(np.sum(~prev & ~curr))
    n01 = int(np.sum(~prev & curr))
    n10 = int(np.sum(prev & ~curr))
    n11 = int(np.sum(prev & curr))
    pi_01 = n01 / (n00 + n01) if (n00 + n01) else 0.0
    pi_11 = n11 / (n10 + n11) if (n10 + n11) else 0.0
    pi_all = (n01 + n11) / (n - 1)
    ll_alt = (
        float(xlogy(n00, 1.0 - pi_01)) + float(xlogy(n01, pi_01))
        + float(xlogy(n10, 1.0 - pi_11)) + float(xlogy(n11, pi_11))
    )
    ll_null = float(xlogy(n00 + n10, 1.0 - pi_all)) + float(xlogy(n01 + n11, pi_all))
    lr_cci = max(2.0 * (ll_alt - ll_null), 0.0)
    pv = float(_chi2.sf(lr_cci, 1))
    tests["CCI"] = TestOutcome(
        statistic=lr_cci, p_value=pv, zone=None, passed=pv >= significance
    )

    # CC: coverage and independence jointly.
    lr_cc = lr_pof + lr_cci
    pv = float(_chi2.sf(lr_cc, 2))
    tests["CC"] = TestOutcome(
        statistic=lr_cc, p_value=pv, zone=None, passed=pv >= significance
    )

    # TBF: sum of per-gap likelihood ratios (first gap from the series start).
    if x == 0:
        tests["TBF"] = TestOutcome(
            statistic=None, p_value=None, zone=None, passed=True, vacuous=True
        )
    else:
        gaps = np.diff(np.concatenate(([-1], positions)))
        lr_tbf = float(sum(_gap_likelihood_ratio(int(v), p) for v in gaps))
        pv = float(_chi2.sf(lr_tbf, x))
        tests["TBF"] = TestOutcome(
            statistic=lr_tbf, p_value=pv, zone=None, passed=pv >= significance
        )

    # TBFI: only the gaps between consecutive exceptions.
    if x <= 1:
        tests["TBFI"] = TestOutcome(
            statistic=None, p_value=None, zone=None, passed=True, vacuous=True
        )
    else:
        between = np.diff(positions)
        lr_tbfi = float(sum(_gap_likelihood_ratio(int(v), p) for v in between))
        pv = float(_chi2.sf(lr_tbfi, max(x - 1, 1)))
        tests["TBFI"] = TestOutcome(
            statistic=lr_tbfi, p_value=pv, zone=None, passed=pv >= significance
        )

    vacuous = [name for name, t in tests.items() if t.vacuous]
    if vacuous:
        warnings.warn(
            f"{', '.join(vacuous)} had no exceptions to test and passed vacuously",
            VacuousTestWarning,
            stacklevel=2,
        )
    return BacktestReport(
        alpha=float(alpha),
        significance=float(significance),
        n_obs=n,
        exception_count=x,
        tests=tests,
    )
