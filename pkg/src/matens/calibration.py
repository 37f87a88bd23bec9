"""Multiplier calibration by likelihood maximization, plus slow oracles.

The log-likelihood of constraint-based exponential ensembles is concave in
the multipliers, and its gradient is the gap between expected and empirical
constraint values, so calibration is a root-find on the constraint
residuals.  The default solver is a damped Newton iteration with a
monotone backtracking line search; a diagonally scaled fixed-point sweep and
plain gradient ascent are available as alternatives, and Newton falls back
to gradient ascent on a failed step.

Sign-restricted univariate multipliers (outer-bin linear tilts, the shared
quadratic) are optimized through a softplus reparametrization so the search
space is unconstrained.  Matrix ensembles keep their natural coordinates;
the positivity of pairwise rate sums is maintained by a logarithmic barrier
whose weight decays by a factor of ten per outer round, with a final polish
at zero barrier protected by the feasibility-aware line search.

``brute_force_log_partition`` re-derives log normalizers by occupancy
enumeration and magnitude quadrature (no closed forms), as an independent
check; it refuses matrices with more than six cells.  ``entropy`` evaluates
the Gibbs entropy of a calibrated ensemble through the Legendre identity
``S = ln Z + sum(multiplier * constraint target)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .core import MarginConstraints, empirical_quantiles
from .errors import (
    DivergentPartition,
    InfeasibleConstraints,
    NotCalibrated,
    OracleTooLarge,
    ShapeMismatch,
)
from .multivariate import (
    ClampSet,
    ConstraintSpec,
    EnsembleModel,
    MultiplierSet,
)
from .univariate import (
    BinStatistics,
    ParamIndex,
    UnivariateModel,
    UnivariateSpec,
    bin_log_norms,
    bin_statistics,
    param_index,
)

__all__ = [
    "CalibrationOptions",
    "CalibrationResult",
    "calibrate",
    "fit_univariate",
    "brute_force_log_partition",
    "entropy",
]

EXIT_CONVERGED = 0
EXIT_UNCONVERGED = 2
EXIT_INFEASIBLE = 3


@dataclass(frozen=True)
class CalibrationOptions:
    """Solver knobs; the defaults suit every pipeline in the package."""

    tol_rel: float = 1e-6
    max_iter: int = 10000
    method: str = "newton"  # "newton" | "gradient" | "fixed_point"
    barrier_strength: float = 1e-2
    barrier_decay: float = 0.1
    min_step: float = 1e-14

    def __post_init__(self) -> None:
        if self.method not in ("newton", "gradient", "fixed_point"):
            raise ShapeMismatch(f"unknown method {self.method!r}")
        if not (self.tol_rel > 0 and self.max_iter > 0):
            raise ShapeMismatch("tol_rel and max_iter must be positive")


@dataclass
class CalibrationResult:
    converged: bool
    iterations: int
    max_rel_constraint_err: float
    log_likelihood: float
    method: str
    dropped_constraints: tuple[str, ...] = ()
    message: str = ""

    @property
    def exit_code(self) -> int:
        return EXIT_CONVERGED if self.converged else EXIT_UNCONVERGED


# ---------------------------------------------------------------------------
# generic concave maximizer
# ---------------------------------------------------------------------------

def _solve_damped(hess: np.ndarray, grad: np.ndarray, damping: float) -> np.ndarray:
    """Ascent direction from (-H + damping I) d = g; H is the lnL Hessian."""
    a = -hess
    k = a.shape[0]
    a = a + damping * np.eye(k)
    try:
        factor = cho_factor(a, check_finite=False)
        return cho_solve(factor, grad, check_finite=False)
    except (LinAlgError, ValueError):
        return np.linalg.lstsq(a, grad, rcond=None)[0]


def _maximize(
    theta0: np.ndarray,
    value: Callable[[np.ndarray], float],
    grad_hess: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    residual: Callable[[np.ndarray], float],
    feasible: Callable[[np.ndarray], bool],
    opts: CalibrationOptions,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, int, float, bool]:
    """Damped-Newton ascent with a monotone backtracking line search.

    Returns (theta, iterations, residual, converged).
    """
    theta = np.array(theta0, dtype=float)
    if not feasible(theta):
        raise InfeasibleConstraints("infeasible starting point")
    fval = value(theta)
    if not math.isfinite(fval):
        raise InfeasibleConstraints("starting point has non-finite likelihood")
    damping = 0.0
    res = residual(theta)
    it = 0
    while it < max_iter:
        if res <= tol:
            return theta, it, res, True
        it += 1
        g, h = grad_hess(theta)
        direction = _solve_damped(h, g, damping)
        if float(g @ direction) <= 0.0:
            direction = g / max(1.0, float(np.max(np.abs(np.diag(h)))))
        slope = float(g @ direction)
        step = 1.0
        accepted = False
        while step >= opts.min_step:
            cand = theta + step * direction
            if feasible(cand):
                cval = value(cand)
                if math.isfinite(cval) and cval >= fval + 1e-4 * step * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if damping < 1e8:
                damping = max(damping * 10.0, 1e-6)
                continue
            return theta, it, res, res <= tol
        theta, fval = cand, cval
        damping = damping * 0.25 if step == 1.0 else min(damping * 4.0 + 1e-8, 1e8)
        if damping < 1e-12:
            damping = 0.0
        res = residual(theta)
    return theta, it, res, res <= tol


def _residual_descend(
    theta0: np.ndarray,
    grad_diag: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    residual: Callable[[np.ndarray], float],
    feasible: Callable[[np.ndarray], bool],
    opts: CalibrationOptions,
    max_iter: int,
    tol: float,
    jacobi: bool,
) -> tuple[np.ndarray, int, float, bool]:
    """First-order iteration on the constraint gap.

    ``jacobi=True`` scales the gradient by the Hessian diagonal (a
    diagonally preconditioned fixed-point sweep); otherwise the whole
    gradient is scaled by the largest curvature.  Steps are accepted when
    they shrink the weighted gradient norm ``sum(g^2 / weight)`` — along
    either direction that norm has a strictly negative derivative wherever
    the gradient is nonzero (the log-likelihood is concave), so backtracking
    always finds a step and the sweep stalls only at the optimum or the
    budget.  Much slower than Newton on ill-conditioned targets; kept as a
    low-memory cross-check.
    """
    theta = np.array(theta0, dtype=float)
    if not feasible(theta):
        raise InfeasibleConstraints("infeasible starting point")
    g, d = grad_diag(theta)
    res = residual(theta)
    omega = 1.0
    it = 0
    while it < max_iter:
        if res <= tol:
            return theta, it, res, True
        it += 1
        d = np.abs(d)
        if jacobi:
            weight = np.where(d > 1e-12, d, 1.0)
        else:
            weight = np.full_like(d, max(1.0, float(np.max(d))))
        direction = g / weight
        phi = float(np.sum(g * g / weight))
        step = omega
        accepted = False
        while step >= opts.min_step:
            cand = theta + step * direction
            if feasible(cand):
                g_cand, d_cand = grad_diag(cand)
                phi_cand = float(np.sum(g_cand * g_cand / weight))
                if phi_cand < phi:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            return theta, it, res, res <= tol
        theta, g, d = cand, g_cand, d_cand
        res = residual(theta)
        omega = min(step * 1.5, 1.0)
    return theta, it, res, res <= tol


# ---------------------------------------------------------------------------
# univariate calibration
# ---------------------------------------------------------------------------

def _softplus(x: np.ndarray | float) -> np.ndarray | float:
    return np.logaddexp(0.0, x)

def _inv_softplus(y: float) -> float:
    if y > 30.0:
        return y
    return math.log(math.expm1(max(y, 1e-300)))


class _UnivariateProblem:
    """lnL, gradient, Hessian in the unconstrained optimizer space."""

    def __init__(self, spec: UnivariateSpec, stats: BinStatistics):
        if stats.counts.size != spec.n_bins:
            raise ShapeMismatch("bin statistics do not match the grid")
        if stats.n_total != spec.n_samples:
            raise ShapeMismatch("spec.n_samples must equal the binned total")
        self.spec = spec
        self.stats = stats
        self.clamped = self._decide_clamps()
        self.index: ParamIndex = param_index(spec, self.clamped)
        self.transforms = self._decide_transforms()
        self.features = self._feature_tensor()
        self.targets = self._target_vector()

    # -- structure -------------------------------------------------------
    def _decide_clamps(self) -> tuple[int, ...]:
        spec, stats = self.spec, self.stats
        layout = spec.layout
        q = spec.grid.edges()
        clamped = []
        for i in range(spec.n_bins):
            if layout.has_counts:
                if stats.counts[i] == 0:
                    clamped.append(i)
                continue
            # sum-constrained families: a zero-sum target on a bin that lies
            # entirely on one side of zero is only reachable in the limit of
            # an infinite multiplier
            if layout.linear == "per_bin_drop_last" and i == spec.n_bins - 1:
                continue
            if stats.sums[i] == 0.0 and stats.counts[i] == 0:
                lo, hi = q[i], q[i + 1]
                if lo >= 0.0 or hi <= 0.0:
                    clamped.append(i)
        return tuple(clamped)

    def _decide_transforms(self) -> list[str]:
        idx = self.index
        q = self.spec.grid.edges()
        out = ["id"] * len(idx.count_bins)
        if idx.shared_linear:
            out.append("id")
        else:
            for i in idx.linear_bins:
                if math.isinf(q[i]) and not idx.has_quad:
                    out.append("neg")
                elif math.isinf(q[i + 1]) and not idx.has_quad:
                    out.append("pos")
                else:
                    out.append("id")
        if idx.has_quad:
            out.append("pos")
        return out

    def _feature_tensor(self) -> np.ndarray:
        idx = self.index
        d = self.spec.n_bins
        f = np.zeros((idx.n_free, d, 3))
        pos = 0
        for i in idx.count_bins:
            f[pos, i, 0] = 1.0
            pos += 1
        if idx.shared_linear:
            f[pos, :, 1] = 1.0
            pos += 1
        else:
            for i in idx.linear_bins:
                f[pos, i, 1] = 1.0
                pos += 1
        if idx.has_quad:
            f[pos, :, 2] = 1.0
            pos += 1
        return f

    def _target_vector(self) -> np.ndarray:
        idx, stats = self.index, self.stats
        out = [stats.counts[i] for i in idx.count_bins]
        if idx.shared_linear:
            out.append(stats.sums.sum())
        else:
            out.extend(stats.sums[i] for i in idx.linear_bins)
        if idx.has_quad:
            out.append(stats.sq_sums.sum())
        return np.array(out, dtype=float)

    # -- transforms --------------------------------------------------------
    def to_model_space(self, theta: np.ndarray) -> np.ndarray:
        out = np.array(theta, dtype=float)
        for k, kind in enumerate(self.transforms):
            if kind == "pos":
                out[k] = _softplus(theta[k])
            elif kind == "neg":
                out[k] = -_softplus(theta[k])
        return out

    def to_optimizer_space(self, params: np.ndarray) -> np.ndarray:
        out = np.array(params, dtype=float)
        for k, kind in enumerate(self.transforms):
            if kind == "pos":
                out[k] = _inv_softplus(params[k])
            elif kind == "neg":
                out[k] = _inv_softplus(-params[k])
        return out

    def _jacobian(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal d(params)/d(theta) and its derivative."""
        j = np.ones_like(theta)
        j2 = np.zeros_like(theta)
        for k, kind in enumerate(self.transforms):
            if kind in ("pos", "neg"):
                sig = 1.0 / (1.0 + math.exp(-theta[k])) if theta[k] > -30 else math.exp(theta[k])
                sign = 1.0 if kind == "pos" else -1.0
                j[k] = sign * sig
                j2[k] = sign * sig * (1.0 - sig)
        return j, j2

    # -- objective ----------------------------------------------------------
    def _moments(self, params: np.ndarray):
        ln_z, mom = bin_log_norms(self.index, params, order=4)
        m = np.max(ln_z)
        masses = np.exp(ln_z - m)
        total = masses.sum()
        p = masses / total
        ln_s = m + math.log(total)
        full = np.vstack([np.ones(self.spec.n_bins), mom])  # orders 0..4
        return ln_s, p, full

    def expected(self, params: np.ndarray) -> np.ndarray:
        _, p, mom = self._moments(params)
        t = self.spec.n_samples
        # E[f_k] = T sum_i p_i (F0 + F1 m1 + F2 m2)
        per_bin = (
            self.features[:, :, 0] * mom[0]
            + self.features[:, :, 1] * mom[1]
            + self.features[:, :, 2] * mom[2]
        )
        return t * (per_bin * p).sum(axis=1)

    def value(self, theta: np.ndarray) -> float:
        params = self.to_model_space(theta)
        try:
            ln_z, _ = bin_log_norms(self.index, params, order=0)
        except DivergentPartition:
            return -math.inf
        m = np.max(ln_z)
        ln_s = m + math.log(np.sum(np.exp(ln_z - m)))
        return float(-(params @ self.targets) - self.spec.n_samples * ln_s)

    def grad_hess(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = self.to_model_space(theta)
        _, p, mom = self._moments(params)
        t = self.spec.n_samples
        nf = self.index.n_free
        per_bin = (
            self.features[:, :, 0] * mom[0]
            + self.features[:, :, 1] * mom[1]
            + self.features[:, :, 2] * mom[2]
        )
        e_f = (per_bin * p).sum(axis=1)
        grad_p = t * e_f - self.targets
        # E[f_k f_l] = sum_i p_i sum_{r,s} F[k,i,r] F[l,i,s] m_{r+s,i}
        e_ff = np.zeros((nf, nf))
        for r in range(3):
            for s in range(3):
                mats = (self.features[:, :, r] * (p * mom[r + s])) @ self.features[:, :, s].T
                e_ff += mats
        cov = e_ff - np.outer(e_f, e_f)
        hess_p = -t * cov
        j, j2 = self._jacobian(theta)
        grad = j * grad_p
        hess = (j[:, None] * hess_p) * j[None, :] + np.diag(grad_p * j2)
        return grad, hess

    def grad_diag(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g, h = self.grad_hess(theta)
        return g, np.diag(h)

    def residual(self, theta: np.ndarray) -> float:
        params = self.to_model_space(theta)
        _, p, mom = self._moments(params)
        t = self.spec.n_samples
        worst = 0.0
        layout = self.spec.layout
        stats = self.stats
        active = self.index.active_bins()
        if layout.has_counts:
            for i in np.nonzero(active)[0]:
                err = abs(t * p[i] - stats.counts[i]) / max(1.0, abs(stats.counts[i]))
                worst = max(worst, err)
        if layout.linear == "shared":
            got = t * float((p * mom[1]).sum())
            want = float(stats.sums.sum())
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        elif layout.linear in ("per_bin", "per_bin_drop_last"):
            for i in self.index.linear_bins:
                got = t * p[i] * mom[1, i]
                want = stats.sums[i]
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        if layout.quadratic == "shared":
            got = t * float((p * mom[2]).sum())
            want = float(stats.sq_sums.sum())
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        return worst

    def initial_theta(self) -> np.ndarray:
        stats, idx = self.stats, self.index
        t = max(stats.n_total, 1)
        mean = stats.sums.sum() / t
        var = max(stats.sq_sums.sum() / t - mean * mean, 1e-12)
        theta = np.zeros(idx.n_free)
        pos = len(idx.count_bins) + (1 if idx.shared_linear else len(idx.linear_bins))
        for k_local, kind in enumerate(self.transforms):
            if kind == "neg" or (kind == "pos" and k_local < pos):
                theta[k_local] = _inv_softplus(1.0 / math.sqrt(var))
        if idx.has_quad:
            theta[-1] = _inv_softplus(0.5 / var)
        return theta

    def dropped_labels(self) -> tuple[str, ...]:
        out = []
        for i in self.clamped:
            if self.spec.layout.has_counts:
                out.append(f"count[{i}]")
            out.append(f"sum[{i}]")
        return tuple(out)


def _calibrate_univariate(
    spec: UnivariateSpec,
    stats: BinStatistics,
    opts: CalibrationOptions,
) -> tuple[UnivariateModel, CalibrationResult]:
    prob = _UnivariateProblem(spec, stats)
    if opts.method == "newton":
        theta, iters, res, ok = _maximize(
            prob.initial_theta(),
            prob.value,
            prob.grad_hess,
            prob.residual,
            lambda th: True,
            opts,
            opts.max_iter,
            opts.tol_rel,
        )
    else:
        theta, iters, res, ok = _residual_descend(
            prob.initial_theta(),
            prob.grad_diag,
            prob.residual,
            lambda th: True,
            opts,
            opts.max_iter,
            opts.tol_rel,
            jacobi=opts.method == "fixed_point",
        )
    params = prob.to_model_space(theta)
    lnl = prob.value(theta)
    model = UnivariateModel(
        spec=spec,
        params=params,
        clamped_bins=prob.clamped,
        log_likelihood=lnl,
        targets=stats,
    )
    result = CalibrationResult(
        converged=ok,
        iterations=iters,
        max_rel_constraint_err=res,
        log_likelihood=lnl,
        method=opts.method,
        dropped_constraints=prob.dropped_labels(),
        message="" if ok else "iteration budget exhausted",
    )
    return model, result


def fit_univariate(
    values: Sequence[float] | np.ndarray,
    xi: Sequence[float],
    family: str,
    options: CalibrationOptions | None = None,
    *,
    unbounded_ends: bool = True,
) -> tuple[UnivariateModel, CalibrationResult]:
    """Grid estimation + binning + calibration in one call."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    grid = empirical_quantiles(x, xi, unbounded_ends=unbounded_ends)
    stats = bin_statistics(x, grid)
    spec = UnivariateSpec(grid=grid, family=family, n_samples=x.size)
    opts = options or CalibrationOptions()
    return calibrate(spec, stats, opts)


# ---------------------------------------------------------------------------
# matrix calibration
# ---------------------------------------------------------------------------

_FAMILY_SIGN = {"alpha": "plus", "beta": "minus", "gamma": "plus", "sigma": "minus"}
_FAMILY_TARGET_ROW = {
    "alpha": "n_plus_row", "beta": "n_minus_row",
    "gamma": "s_plus_row", "sigma": "s_minus_row",
}
_FAMILY_TARGET_COL = {
    "alpha": "n_plus_col", "beta": "n_minus_col",
    "gamma": "s_plus_col", "sigma": "s_minus_col",
}


class _MatrixProblem:
    """Free-vector view of a matrix ensemble calibration."""

    def __init__(
        self,
        spec: ConstraintSpec,
        margins: MarginConstraints,
        clamps: ClampSet,
    ):
        n, t = spec.n_rows, spec.n_cols
        if margins.n_rows != n or margins.n_cols != t:
            raise ShapeMismatch("margins do not match the spec shape")
        self.spec = spec
        self.margins = margins
        self.clamps = clamps
        self.plus_active = clamps.plus_active()
        self.minus_active = clamps.minus_active()
        if spec.variant == "no_missing" and np.any(
            ~self.plus_active & ~self.minus_active
        ):
            raise InfeasibleConstraints(
                "no_missing cannot host a cell clamped on both signs"
            )
        cc = spec.constrained_cols
        self.row_sel: dict[str, np.ndarray] = {}
        self.col_sel: dict[str, np.ndarray] = {}
        self.row_pos: dict[str, np.ndarray] = {}
        self.col_pos: dict[str, np.ndarray] = {}
        self.gauge_col: dict[str, int | None] = {}
        targets = []
        pos = 0
        for fam in spec.families:
            sign = _FAMILY_SIGN[fam]
            row_clamp = getattr(clamps, f"row_{sign}")
            col_clamp = getattr(clamps, f"col_{sign}")
            rows = np.nonzero(~row_clamp)[0]
            live_cols = ~col_clamp
            cols = np.nonzero(live_cols & cc)[0]
            gauge: int | None = None
            if cols.size and not np.any(live_cols & ~cc):
                # every live column is constrained: the family has a free
                # additive gauge; pin its first live constrained column
                gauge = int(cols[0])
                cols = cols[1:]
            self.gauge_col[fam] = gauge
            rp = np.full(n, -1, dtype=int)
            rp[rows] = np.arange(pos, pos + rows.size)
            pos += rows.size
            cp = np.full(t, -1, dtype=int)
            cp[cols] = np.arange(pos, pos + cols.size)
            pos += cols.size
            self.row_sel[fam] = rows
            self.col_sel[fam] = cols
            self.row_pos[fam] = rp
            self.col_pos[fam] = cp
            targets.append(np.asarray(getattr(margins, _FAMILY_TARGET_ROW[fam]))[rows])
            targets.append(np.asarray(getattr(margins, _FAMILY_TARGET_COL[fam]))[cols])
        self.n_free = pos
        self.targets = np.concatenate(targets) if targets else np.zeros(0)
        self._identity_check()

    def _identity_check(self) -> None:
        m = self.margins
        if not self.spec.all_cols_constrained:
            return
        for fam in self.spec.families:
            row_tot = float(np.asarray(getattr(m, _FAMILY_TARGET_ROW[fam])).sum())
            col_tot = float(np.asarray(getattr(m, _FAMILY_TARGET_COL[fam])).sum())
            if abs(row_tot - col_tot) > 1e-6 * max(1.0, abs(row_tot)):
                raise InfeasibleConstraints(
                    f"{fam}: row totals ({row_tot}) and column totals "
                    f"({col_tot}) disagree"
                )

    # -- vector packing ----------------------------------------------------
    def full_arrays(self, theta: np.ndarray) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        out = {}
        n, t = self.spec.n_rows, self.spec.n_cols
        for fam in ("alpha", "beta", "gamma", "sigma"):
            r = np.zeros(n)
            c = np.zeros(t)
            if fam in self.spec.families:
                rp, cp = self.row_pos[fam], self.col_pos[fam]
                sel = rp >= 0
                r[sel] = theta[rp[sel]]
                sel = cp >= 0
                c[sel] = theta[cp[sel]]
            out[fam] = (r, c)
        return out

    def to_multipliers(self, theta: np.ndarray) -> MultiplierSet:
        full = self.full_arrays(theta)
        return MultiplierSet(
            variant=self.spec.variant,
            alpha_row=full["alpha"][0], alpha_col=full["alpha"][1],
            beta_row=full["beta"][0], beta_col=full["beta"][1],
            gamma_row=full["gamma"][0], gamma_col=full["gamma"][1],
            sigma_row=full["sigma"][0], sigma_col=full["sigma"][1],
        )

    def from_multipliers(self, ms: MultiplierSet) -> np.ndarray:
        theta = np.zeros(self.n_free)
        for fam in self.spec.families:
            rp, cp = self.row_pos[fam], self.col_pos[fam]
            row = getattr(ms, f"{fam}_row")
            col = getattr(ms, f"{fam}_col")
            sel = rp >= 0
            theta[rp[sel]] = row[sel]
            sel = cp >= 0
            theta[cp[sel]] = col[sel]
        return theta

    # -- cell quantities -----------------------------------------------------
    def _cells(self, theta: np.ndarray):
        full = self.full_arrays(theta)
        a = full["alpha"][0][:, None] + full["alpha"][1][None, :]
        b = full["beta"][0][:, None] + full["beta"][1][None, :]
        g = full["gamma"][0][:, None] + full["gamma"][1][None, :]
        s = full["sigma"][0][:, None] + full["sigma"][1][None, :]
        pa, ma = self.plus_active, self.minus_active
        if np.any(g[pa] <= 0.0) or np.any(s[ma] <= 0.0):
            return None
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.where(pa, -a - np.log(np.where(pa, g, 1.0)), -np.inf)
            lm = np.where(ma, -b - np.log(np.where(ma, s, 1.0)), -np.inf)
        if self.spec.variant == "with_missing":
            log_z = np.logaddexp(np.logaddexp(0.0, lp), lm)
        else:
            log_z = np.logaddexp(lp, lm)
        p_plus = np.exp(lp - log_z)
        p_minus = np.exp(lm - log_z)
        return p_plus, p_minus, g, s, log_z

    def feasible(self, theta: np.ndarray) -> bool:
        full = self.full_arrays(theta)
        g = full["gamma"][0][:, None] + full["gamma"][1][None, :]
        s = full["sigma"][0][:, None] + full["sigma"][1][None, :]
        return bool(
            np.all(g[self.plus_active] > 0.0) and np.all(s[self.minus_active] > 0.0)
        )

    def value(self, theta: np.ndarray, barrier: float = 0.0) -> float:
        cells = self._cells(theta)
        if cells is None:
            return -math.inf
        p_plus, p_minus, g, s, log_z = cells
        val = float(-(theta @ self.targets) - log_z.sum())
        if barrier > 0.0:
            val += barrier * float(
                np.log(g[self.plus_active]).sum() + np.log(s[self.minus_active]).sum()
            )
        return val

    def _expected_vector(self, p_plus, p_minus, g, s) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            w_plus = np.where(self.plus_active, p_plus / g, 0.0)
            w_minus = np.where(self.minus_active, p_minus / s, 0.0)
        mats = {"alpha": p_plus, "beta": p_minus, "gamma": w_plus, "sigma": w_minus}
        out = np.zeros(self.n_free)
        for fam in self.spec.families:
            m = mats[fam]
            rows, cols = self.row_sel[fam], self.col_sel[fam]
            rp, cp = self.row_pos[fam], self.col_pos[fam]
            out[rp[rows]] = m[rows, :].sum(axis=1)
            out[cp[cols]] = m[:, cols].sum(axis=0)
        return out

    def grad_hess(self, theta: np.ndarray, barrier: float = 0.0):
        cells = self._cells(theta)
        if cells is None:
            raise DivergentPartition("left the feasible region")
        p_plus, p_minus, g, s, _ = cells
        expected = self._expected_vector(p_plus, p_minus, g, s)
        grad = expected - self.targets
        with np.errstate(divide="ignore", invalid="ignore"):
            mp = np.where(self.plus_active, p_plus / g, 0.0)
            mm = np.where(self.minus_active, p_minus / s, 0.0)
            qp = np.where(self.plus_active, 2.0 * p_plus / (g * g), 0.0)
            qm = np.where(self.minus_active, 2.0 * p_minus / (s * s), 0.0)
        cov = {
            ("alpha", "alpha"): p_plus * (1.0 - p_plus),
            ("alpha", "beta"): -p_plus * p_minus,
            ("alpha", "gamma"): mp * (1.0 - p_plus),
            ("alpha", "sigma"): -p_plus * mm,
            ("beta", "beta"): p_minus * (1.0 - p_minus),
            ("beta", "gamma"): -p_minus * mp,
            ("beta", "sigma"): mm * (1.0 - p_minus),
            ("gamma", "gamma"): qp - mp * mp,
            ("gamma", "sigma"): -mp * mm,
            ("sigma", "sigma"): qm - mm * mm,
        }
        k = self.n_free
        hess = np.zeros((k, k))
        fams = self.spec.families
        for f in fams:
            for h in fams:
                c = cov.get((f, h))
                if c is None:
                    c = cov[(h, f)]
                rf, cf = self.row_sel[f], self.col_sel[f]
                rh, ch = self.row_sel[h], self.col_sel[h]
                rpf, cpf = self.row_pos[f], self.col_pos[f]
                rph, cph = self.row_pos[h], self.col_pos[h]
                common = np.nonzero((rpf >= 0) & (rph >= 0))[0]
                if common.size:
                    hess[rpf[common], rph[common]] -= c[common, :].sum(axis=1)
                commonc = np.nonzero((cpf >= 0) & (cph >= 0))[0]
                if commonc.size:
                    hess[cpf[commonc], cph[commonc]] -= c[:, commonc].sum(axis=0)
                if rf.size and ch.size:
                    block = c[np.ix_(rf, ch)]
                    hess[np.ix_(rpf[rf], cph[ch])] -= block
                    hess[np.ix_(cph[ch], rpf[rf])] -= block.T
        if barrier > 0.0:
            self._add_barrier(theta, grad, hess, barrier)
        return grad, hess

    def _add_barrier(self, theta, grad, hess, barrier: float) -> None:
        full = self.full_arrays(theta)
        for fam, active in (("gamma", self.plus_active), ("sigma", self.minus_active)):
            if fam not in self.spec.families:
                continue
            r, c = full[fam]
            pair = r[:, None] + c[None, :]
            with np.errstate(divide="ignore"):
                inv = np.where(active, 1.0 / pair, 0.0)
            inv2 = inv * inv
            rows, cols = self.row_sel[fam], self.col_sel[fam]
            rp, cp = self.row_pos[fam], self.col_pos[fam]
            grad[rp[rows]] += barrier * inv[rows, :].sum(axis=1)
            grad[cp[cols]] += barrier * inv[:, cols].sum(axis=0)
            hess[rp[rows], rp[rows]] -= barrier * inv2[rows, :].sum(axis=1)
            hess[cp[cols], cp[cols]] -= barrier * inv2[:, cols].sum(axis=0)
            if rows.size and cols.size:
                block = inv2[np.ix_(rows, cols)]
                hess[np.ix_(rp[rows], cp[cols])] -= barrier * block
                hess[np.ix_(cp[cols], rp[rows])] -= barrier * block.T

    def grad_diag(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient plus the Hessian diagonal only (for first-order sweeps)."""
        cells = self._cells(theta)
        if cells is None:
            raise DivergentPartition("left the feasible region")
        p_plus, p_minus, g, s, _ = cells
        expected = self._expected_vector(p_plus, p_minus, g, s)
        grad = expected - self.targets
        with np.errstate(divide="ignore", invalid="ignore"):
            mp = np.where(self.plus_active, p_plus / g, 0.0)
            mm = np.where(self.minus_active, p_minus / s, 0.0)
            qp = np.where(self.plus_active, 2.0 * p_plus / (g * g), 0.0)
            qm = np.where(self.minus_active, 2.0 * p_minus / (s * s), 0.0)
        own = {
            "alpha": p_plus * (1.0 - p_plus),
            "beta": p_minus * (1.0 - p_minus),
            "gamma": qp - mp * mp,
            "sigma": qm - mm * mm,
        }
        diag = np.zeros(self.n_free)
        for fam in self.spec.families:
            c = own[fam]
            rows, cols = self.row_sel[fam], self.col_sel[fam]
            rp, cp = self.row_pos[fam], self.col_pos[fam]
            diag[rp[rows]] = -c[rows, :].sum(axis=1)
            diag[cp[cols]] = -c[:, cols].sum(axis=0)
        return grad, diag

    def residual(self, theta: np.ndarray) -> float:
        cells = self._cells(theta)
        if cells is None:
            return math.inf
        p_plus, p_minus, g, s, _ = cells
        expected = self._expected_vector(p_plus, p_minus, g, s)
        rel = np.abs(expected - self.targets) / np.maximum(1.0, np.abs(self.targets))
        return float(rel.max()) if rel.size else 0.0

    def initial_theta(self) -> np.ndarray:
        m = self.margins
        theta = np.zeros(self.n_free)
        rate_pairs = (
            ("gamma", m.n_plus_row, m.s_plus_row, m.n_plus_col, m.s_plus_col),
            ("sigma", m.n_minus_row, m.s_minus_row, m.n_minus_col, m.s_minus_col),
        )
        for fam, nr, sr, nc, sc in rate_pairs:
            if fam not in self.spec.families:
                continue
            rows, cols = self.row_sel[fam], self.col_sel[fam]
            rp, cp = self.row_pos[fam], self.col_pos[fam]
            with np.errstate(divide="ignore", invalid="ignore"):
                r_rate = np.where(np.asarray(sr) > 0, np.asarray(nr) / np.maximum(np.asarray(sr), 1e-300), 1.0)
                c_rate = np.where(np.asarray(sc) > 0, np.asarray(nc) / np.maximum(np.asarray(sc), 1e-300), 1.0)
            theta[rp[rows]] = 0.5 * r_rate[rows]
            theta[cp[cols]] = 0.5 * c_rate[cols]
        return theta

    def dropped_labels(self) -> tuple[str, ...]:
        out = []
        for fam in self.spec.families:
            sign = _FAMILY_SIGN[fam]
            for i in np.nonzero(getattr(self.clamps, f"row_{sign}"))[0]:
                out.append(f"{fam}_row[{i}]")
            for t in np.nonzero(getattr(self.clamps, f"col_{sign}"))[0]:
                out.append(f"{fam}_col[{t}]")
        return tuple(out)


def _calibrate_matrix(
    spec: ConstraintSpec,
    margins: MarginConstraints,
    opts: CalibrationOptions,
    initial: MultiplierSet | None = None,
) -> tuple[EnsembleModel, CalibrationResult]:
    clamps = ClampSet.from_margins(margins, spec.constrained_cols)
    prob = _MatrixProblem(spec, margins, clamps)
    if initial is not None and initial.shape == (spec.n_rows, spec.n_cols):
        theta = prob.from_multipliers(initial)
        if not prob.feasible(theta):
            theta = prob.initial_theta()
    else:
        theta = prob.initial_theta()

    total_iters = 0
    if opts.method == "newton":
        # barrier continuation keeps the Newton path interior; it may spend
        # at most half the budget before the zero-barrier polish
        barrier = opts.barrier_strength
        barrier_budget = opts.max_iter // 2
        while barrier > 1e-12 and barrier_budget > 0:
            theta, its, _, _ = _maximize(
                theta,
                lambda th, mu=barrier: prob.value(th, mu),
                lambda th, mu=barrier: prob.grad_hess(th, mu),
                prob.residual,
                prob.feasible,
                opts,
                min(barrier_budget, max(50, opts.max_iter // 10)),
                max(opts.tol_rel, barrier),
            )
            total_iters += its
            barrier_budget -= its
            barrier *= opts.barrier_decay
        theta, its, res, ok = _maximize(
            theta,
            prob.value,
            prob.grad_hess,
            prob.residual,
            prob.feasible,
            opts,
            max(opts.max_iter - total_iters, 1),
            opts.tol_rel,
        )
        total_iters += its
        if not ok:
            # first-order fallback from the best point so far
            theta, its2, res, ok = _residual_descend(
                theta,
                prob.grad_diag,
                prob.residual,
                prob.feasible,
                opts,
                max(opts.max_iter - total_iters, 1),
                opts.tol_rel,
                jacobi=True,
            )
            total_iters += its2
    else:
        theta, total_iters, res, ok = _residual_descend(
            theta,
            prob.grad_diag,
            prob.residual,
            prob.feasible,
            opts,
            opts.max_iter,
            opts.tol_rel,
            jacobi=opts.method == "fixed_point",
        )
    lnl = prob.value(theta)
    model = EnsembleModel(
        spec=spec,
        multipliers=prob.to_multipliers(theta),
        clamps=clamps,
        margins=margins,
        log_likelihood=lnl,
    )
    result = CalibrationResult(
        converged=ok,
        iterations=total_iters,
        max_rel_constraint_err=res,
        log_likelihood=lnl,
        method=opts.method,
        dropped_constraints=prob.dropped_labels(),
        message="" if ok else "iteration budget exhausted",
    )
    return model, result


# ---------------------------------------------------------------------------
# front door
# ---------------------------------------------------------------------------

def calibrate(
    spec: UnivariateSpec | ConstraintSpec,
    constraints: BinStatistics | MarginConstraints,
    options: CalibrationOptions | None = None,
    *,
    initial: MultiplierSet | None = None,
):
    """Calibrate multipliers so expected constraints match the targets.

    Returns ``(model, CalibrationResult)``.  The result's ``converged`` flag
    reports whether every active constraint is matched to the relative
    tolerance; an exhausted budget leaves the flag False (no exception).
    """
    opts = options or CalibrationOptions()
    if isinstance(spec, UnivariateSpec):
        if not isinstance(constraints, BinStatistics):
            raise ShapeMismatch("univariate specs calibrate against BinStatistics")
        return _calibrate_univariate(spec, constraints, opts)
    if isinstance(spec, ConstraintSpec):
        if not isinstance(constraints, MarginConstraints):
            raise ShapeMismatch("matrix specs calibrate against MarginConstraints")
        return _calibrate_matrix(spec, constraints, opts, initial=initial)
    raise ShapeMismatch(f"unknown spec type {type(spec).__name__}")


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _simpson(y: np.ndarray, h: float) -> float:
    n = y.size
    if n < 3 or n % 2 == 0:
        raise ShapeMismatch("Simpson rule needs an odd number of nodes >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((w @ y) * h / 3.0)


def _log_quad_exp_linear(offset: float, rate: float, resolution: int) -> float:
    """log of ∫_0^(40/rate) exp(-(offset + rate w)) dw by Simpson quadrature."""
    upper = 40.0 / rate
    w = np.linspace(0.0, upper, resolution)
    expo = -(offset + rate * w)
    m = float(np.max(expo))
    return m + math.log(_simpson(np.exp(expo - m), w[1] - w[0]))


def brute_force_log_partition(model, resolution: int = 2001) -> float:
    """Log normalizer recomputed without closed forms.

    Matrix ensembles: enumerate every occupancy pattern (two or three states
    per cell) and integrate each occupied cell's magnitude weight on a
    truncated grid; refuses more than six cells.  Univariate models:
    per-draw normalizer by Simpson quadrature over each bin with tails cut
    where the weight is negligible.
    """
    if resolution % 2 == 0:
        resolution += 1
    if isinstance(model, UnivariateModel):
        return _brute_force_univariate(model, resolution)
    if not isinstance(model, EnsembleModel):
        raise ShapeMismatch("oracle understands univariate or matrix models")
    n, t = model.shape
    if n * t > 6:
        raise OracleTooLarge(f"{n}x{t} exceeds the 6-cell oracle guard")
    ms = model.multipliers
    a = ms.pair_sums("alpha")
    b = ms.pair_sums("beta")
    g = ms.pair_sums("gamma")
    s = ms.pair_sums("sigma")
    plus_ok = model.clamps.plus_active()
    minus_ok = model.clamps.minus_active()
    states = (0, 1, 2) if model.spec.variant == "with_missing" else (1, 2)
    cells = [(i, j) for i in range(n) for j in range(t)]
    # per-cell log weight of each occupancy state
    log_w = {}
    for (i, j) in cells:
        row = {}
        if 0 in states:
            row[0] = 0.0
        row[1] = (
            _log_quad_exp_linear(a[i, j], g[i, j], resolution)
            if plus_ok[i, j]
            else -math.inf
        )
        row[2] = (
            _log_quad_exp_linear(b[i, j], s[i, j], resolution)
            if minus_ok[i, j]
            else -math.inf
        )
        log_w[(i, j)] = row
    pattern_logs = []
    for pattern in itertools.product(states, repeat=len(cells)):
        tot = 0.0
        for cell, st in zip(cells, pattern):
            tot += log_w[cell][st]
            if tot == -math.inf:
                break
        pattern_logs.append(tot)
    arr = np.array(pattern_logs)
    m = float(np.max(arr))
    if not math.isfinite(m):
        raise DivergentPartition("all occupancy patterns carry zero weight")
    return m + math.log(float(np.sum(np.exp(arr - m))))


def _brute_force_univariate(model: UnivariateModel, resolution: int) -> float:
    idx = model.index
    a, b, c = idx.expand(model.params)
    q = model.spec.grid.edges()
    bin_logs = []
    for i in np.nonzero(idx.active_bins())[0]:
        lo, hi = q[i], q[i + 1]
        if c[i] > 0.0:
            mu = -b[i] / (2.0 * c[i])
            sdev = 1.0 / math.sqrt(2.0 * c[i])
            lo = max(lo, mu - 15.0 * sdev)
            hi = min(hi, mu + 15.0 * sdev)
            if hi <= lo:
                continue
        else:
            if math.isinf(lo):
                lo = hi - 40.0 / abs(b[i])
            if math.isinf(hi):
                hi = lo + 40.0 / abs(b[i])
        x = np.linspace(lo, hi, resolution)
        expo = -(a[i] + b[i] * x + c[i] * x * x)
        m = float(np.max(expo))
        bin_logs.append(m + math.log(_simpson(np.exp(expo - m), x[1] - x[0])))
    arr = np.array(bin_logs)
    m = float(np.max(arr))
    per_draw = m + math.log(float(np.sum(np.exp(arr - m))))
    return model.spec.n_samples * per_draw


# ---------------------------------------------------------------------------
# entropy
# ---------------------------------------------------------------------------

def entropy(model: UnivariateModel | EnsembleModel) -> float:
    """Gibbs entropy via the Legendre identity ``S = ln Z + sum(m * target)``.

    Needs the calibration targets the model was fit to; equals the negated
    maximized log-likelihood.
    """
    if isinstance(model, UnivariateModel):
        if model.targets is None:
            raise NotCalibrated("entropy needs the model's constraint targets")
        idx = model.index
        a, b, c = idx.expand(model.params)
        st = model.targets
        hamiltonian = float(a @ st.counts + b @ st.sums + c @ st.sq_sums)
        return model.log_partition() + hamiltonian
    if isinstance(model, EnsembleModel):
        if model.margins is None:
            raise NotCalibrated("entropy needs the model's constraint targets")
        ms, m = model.multipliers, model.margins
        hamiltonian = (
            float(ms.alpha_row @ m.n_plus_row) + float(ms.alpha_col @ m.n_plus_col)
            + float(ms.beta_row @ m.n_minus_row) + float(ms.beta_col @ m.n_minus_col)
            + float(ms.gamma_row @ m.s_plus_row) + float(ms.gamma_col @ m.s_plus_col)
            + float(ms.sigma_row @ m.s_minus_row) + float(ms.sigma_col @ m.s_minus_col)
        )
        return model.log_partition() + hamiltonian
    raise ShapeMismatch(f"unknown model type {type(model).__name__}")
