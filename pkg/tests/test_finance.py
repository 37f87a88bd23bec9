"""Tests for the financial pipelines.

Closed-form claims (portfolio algebra, circulant layout, backtest
likelihood ratios) are verified against hand computations; Monte-Carlo
claims use fixed seeds with explicit tolerance bands.
"""

import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import xlogy
from scipy.stats import chi2

from matens.calibration import CalibrationOptions
from matens.core import DataMatrix
from matens.errors import (
    DegenerateFrontier,
    DegenerateRow,
    DegenerateWindow,
    EmptyInput,
    InsufficientSample,
    ShapeMismatch,
    SingularCorrelation,
    VacuousTestWarning,
)
from matens.finance import (
    VarModelSpec,
    _VarEngine,
    backtest_suite,
    circulant_embed,
    detrend,
    markowitz_weights,
    out_of_sample_eval,
    rolling_var,
    var_estimate,
)
from matens.multivariate import ClampSet, ConstraintSpec, EnsembleModel, MultiplierSet


def no_missing_model(n, t, seed, symmetric=False):
    rng = np.random.default_rng(seed)
    gr, gc = rng.uniform(0.5, 1.2, n), rng.uniform(0.5, 1.2, t)
    if symmetric:
        ar, ac = np.zeros(n), np.zeros(t)
        sr, sc = gr.copy(), gc.copy()
    else:
        ar, ac = rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, t)
        sr, sc = rng.uniform(0.5, 1.2, n), rng.uniform(0.5, 1.2, t)
    ms = MultiplierSet(
        variant="no_missing",
        alpha_row=ar, beta_row=np.zeros(n),
        gamma_row=gr, sigma_row=sr,
        alpha_col=ac, beta_col=np.zeros(t),
        gamma_col=gc, sigma_col=sc,
    )
    spec = ConstraintSpec(
        variant="no_missing", families=("alpha", "gamma", "sigma"), n_rows=n, n_cols=t
    )
    return EnsembleModel(spec=spec, multipliers=ms)


class TestDetrend:
    def test_symmetric_model_changes_nothing(self):
        model = no_missing_model(4, 9, seed=1, symmetric=True)
        data = model.sample(seed=2)
        out = detrend(data, model)
        assert_allclose(out.values, data.values, atol=1e-14)

    def test_pure_positive_cell_subtracts_exponential_mean(self):
        ms = MultiplierSet(
            variant="no_missing",
            alpha_row=np.array([0.3]), beta_row=np.array([0.0]),
            gamma_row=np.array([1.0]), sigma_row=np.array([0.5]),
            alpha_col=np.array([0.0]), beta_col=np.array([0.0]),
            gamma_col=np.array([1.0]), sigma_col=np.array([0.5]),
        )
        spec = ConstraintSpec(
            variant="no_missing", families=("alpha", "gamma", "sigma"),
            n_rows=1, n_cols=1,
        )
        clamps = ClampSet(
            row_plus=np.array([False]), row_minus=np.array([True]),
            col_plus=np.array([False]), col_minus=np.array([False]),
        )
        model = EnsembleModel(spec=spec, multipliers=ms, clamps=clamps)
        # the only live state is positive with rate 2, so the mean is 1/2
        data = DataMatrix(values=np.array([[0.8]]), mask=np.array([[True]]))
        out = detrend(data, model)
        assert_allclose(out.values, [[0.3]], atol=1e-14)

    def test_detrended_draws_center_on_zero(self):
        model = no_missing_model(6, 10, seed=3)
        acc = np.zeros((6, 10))
        n_rep = 400
        for k in range(n_rep):
            acc += detrend(model.sample(seed=1000 + k), model).values
        mean = acc / n_rep
        se = np.sqrt(model.variance_matrix() / n_rep)
        assert np.all(np.abs(mean) < 4 * se)

    def test_missing_cells_stay_missing(self):
        rng = np.random.default_rng(5)
        base = no_missing_model(3, 5, seed=4)
        values = rng.standard_normal((3, 5))
        mask = rng.random((3, 5)) > 0.3
        data = DataMatrix(values=np.where(mask, values, np.nan), mask=mask)
        out = detrend(data, base)
        assert np.array_equal(out.mask, mask)
        assert np.all(np.isnan(out.values[~mask]))

    def test_shape_mismatch(self):
        model = no_missing_model(3, 5, seed=4)
        bad = DataMatrix(values=np.zeros((2, 5)), mask=np.ones((2, 5), bool))
        with pytest.raises(ShapeMismatch):
            detrend(bad, model)


class TestMarkowitz:
    def test_two_orthogonal_assets_hand_solution(self):
        # exactly uncorrelated rows with distinct mean-reversion returns
        row1 = 0.5 * np.tile([1.0, -1.0], 20)
        row2 = 1.5 * np.tile([1.0, 1.0, -1.0, -1.0], 10)
        window = np.vstack([row1, row2])
        assert abs(np.corrcoef(window)[0, 1]) < 1e-15
        mu = -window[:, -1]  # (0.5, 1.5)
        sol = markowitz_weights(window)
        # with C = I: a=2, b=mu1+mu2, c=|mu|^2, target (mu1+mu2)/2 -> g = 0
        assert_allclose(sol.weights, [0.5, 0.5], atol=1e-12)
        assert_allclose(sol.target_return, mu.mean(), rtol=1e-15)
        target = float(mu[0])  # ask for the first asset's expected return
        sol2 = markowitz_weights(window, target_return=target)
        det = 2 * (mu @ mu) - mu.sum() ** 2
        ell = (mu @ mu - mu.sum() * target) / det
        gee = (2 * target - mu.sum()) / det
        assert_allclose(sol2.weights, ell + gee * mu, atol=1e-12)
        assert_allclose(sol2.weights @ mu, target, atol=1e-12)

    def test_equal_expected_returns_give_minimum_variance(self):
        rng = np.random.default_rng(9)
        window = rng.standard_normal((5, 60))
        window[:, -1] = -0.02  # identical mean-reversion returns
        sol = markowitz_weights(window)
        corr = np.corrcoef(window)
        expected = np.linalg.solve(corr, np.ones(5))
        expected /= expected.sum()
        assert_allclose(sol.weights, expected, atol=1e-10)
        with pytest.raises(DegenerateFrontier):
            markowitz_weights(window, target_return=0.05)

    def test_constraints_hold_on_random_windows(self):
        rng = np.random.default_rng(13)
        for trial in range(5):
            window = rng.standard_normal((8, 100)) * 0.02
            mu = -window[:, -1]
            target = float(mu.mean() + 0.3 * mu.std())
            sol = markowitz_weights(window, target_return=target)
            assert abs(sol.weights.sum() - 1.0) < 1e-10
            assert abs(sol.weights @ mu - target) < 1e-8
            assert sol.in_sample_variance >= 0.0

    def test_degenerate_inputs(self):
        rng = np.random.default_rng(17)
        with pytest.raises(SingularCorrelation):
            markowitz_weights(rng.standard_normal((10, 10)))
        dup = np.vstack([np.ones(50) * 0.1, rng.standard_normal(50)])
        dup[0] = dup[1]  # identical assets: singular correlation
        with pytest.raises(SingularCorrelation):
            markowitz_weights(dup)
        flat = rng.standard_normal((3, 40))
        flat[1] = 0.25
        with pytest.raises(DegenerateRow):
            markowitz_weights(flat)
        with pytest.raises(ShapeMismatch):
            markowitz_weights(np.zeros(10))


class TestCirculantEmbed:
    def test_toy_layout_matches_hand_construction(self):
        out = circulant_embed([1.0, 2.0, 3.0, 4.0], 2, 3, epsilon=9.0)
        assert_allclose(out.values, [[2, 3, 4, 9], [1, 2, 3, 4]])
        assert out.mask.all()

    def test_full_scale_corners(self):
        r = np.arange(1.0, 151.0)
        out = circulant_embed(r, 25, 126, epsilon=-0.5)
        assert out.shape == (25, 127)
        assert out.values[24, 0] == 1.0       # bottom-left holds the first return
        assert out.values[0, 0] == 25.0       # top row starts at return 25
        assert out.values[0, 126] == -0.5     # ... and ends in the free slot
        assert np.isfinite(out.values).all()

    def test_diagonal_multiplicities(self):
        l1, l2 = 5, 7
        tau = l1 + l2 - 1
        r = np.arange(1.0, tau + 1.0)
        out = circulant_embed(r, l1, l2, epsilon=99.0)
        for m in range(1, tau + 1):
            count = int(np.sum(out.values == float(m)))
            # rows k with 0 <= m - l1 + k <= l2 hold return m on one diagonal
            k_lo = max(0, l1 - m)
            k_hi = min(l1 - 1, l1 + l2 - m)
            assert count == k_hi - k_lo + 1
        assert int(np.sum(out.values == 99.0)) == 1

    def test_window_length_validated(self):
        with pytest.raises(ShapeMismatch):
            circulant_embed([1.0, 2.0, 3.0], 2, 3, epsilon=0.0)
        with pytest.raises(ShapeMismatch):
            circulant_embed([1.0, np.nan, 3.0, 4.0], 2, 3, epsilon=0.0)


class TestVarModelSpec:
    def test_declared_constraint_counts(self):
        assert VarModelSpec("M1").declared_constraints() == 4
        assert VarModelSpec("M2").declared_constraints() == 302
        assert VarModelSpec("M3").declared_constraints() == 453

    def test_geometry_validated(self):
        with pytest.raises(ShapeMismatch):
            VarModelSpec("M4")
        with pytest.raises(ShapeMismatch):
            VarModelSpec("M2", window=100)  # 25 + 126 - 1 != 100
        with pytest.raises(ShapeMismatch):
            VarModelSpec("M1", var_level=1.0)
        VarModelSpec("M2", window=10, shape=(3, 8))  # consistent toy geometry


class TestVarEstimate:
    def test_gaussian_window_matches_quantile_oracle(self):
        rng = np.random.default_rng(21)
        sigma = 0.02
        spec = VarModelSpec("M1")
        estimates = []
        for _ in range(100):
            window = rng.normal(0.0, sigma, 150)
            estimates.append(var_estimate(window, spec))
        median = float(np.median(estimates))
        oracle = -1.645 * sigma
        assert abs(median - oracle) <= 0.15 * abs(oracle)

    def test_alternating_window_is_deterministic_and_in_bin(self):
        c = 0.01
        window = c * np.tile([1.0, -1.0], 75)
        spec = VarModelSpec("M1")
        first = var_estimate(window, spec)
        second = var_estimate(window, spec)
        assert first == second
        assert -c <= first < 0.0
        tighter = var_estimate(window, VarModelSpec("M1", var_level=0.99))
        assert tighter <= first

    def test_ensemble_models_on_toy_geometry(self):
        # sign-balanced window: every diagonal of the embedding sees solid
        # negative mass, so the loss quantile must sit below zero
        window = 0.01 * np.array(
            [1.2, -0.8, 0.5, -1.5, 0.9, -0.6, 1.1, -1.3, 0.7, -1.0]
        )
        for kind in ("M2", "M3"):
            spec = VarModelSpec(kind, window=10, shape=(3, 8))
            v95 = var_estimate(window, spec)
            v99 = var_estimate(window, VarModelSpec(kind, window=10, shape=(3, 8),
                                                    var_level=0.99))
            assert v95 < 0.0
            assert v99 <= v95
            assert var_estimate(window, spec) == v95  # deterministic

    def test_sign_starved_window_can_price_a_gain(self):
        # positives dominate this window; a magnitude-matching ensemble may
        # then put less than five percent of its mass on losses, so the
        # ninety-five percent value-at-risk legitimately crosses zero while
        # the deeper quantile stays a loss
        rng = np.random.default_rng(25)
        window = rng.normal(0.0, 0.01, 10)
        spec = VarModelSpec("M2", window=10, shape=(3, 8))
        v95 = var_estimate(window, spec)
        v99 = var_estimate(window, VarModelSpec("M2", window=10, shape=(3, 8),
                                                var_level=0.99))
        assert v99 <= v95
        assert v99 < 0.0

    def test_degenerate_and_misshapen_windows(self):
        spec = VarModelSpec("M1")
        with pytest.raises(DegenerateWindow):
            var_estimate(np.full(150, 0.01), spec)
        with pytest.raises(ShapeMismatch):
            var_estimate(np.zeros(100), spec)


class TestRollingVar:
    def test_rolling_m1_on_gaussian_series(self):
        rng = np.random.default_rng(29)
        r = rng.normal(0.0, 0.015, 190)
        result = rolling_var(r, VarModelSpec("M1"))
        assert result.start == 150
        assert result.var.shape == (40,)
        assert np.all(result.var < 0.0)
        assert np.array_equal(result.exceptions, r[150:] < result.var)
        assert result.n_exceptions <= 8  # nominal rate 5% of 40, generous cap

    def test_warm_starts_match_cold_estimates(self):
        # warm starts are a speed device; at a tight solver tolerance the
        # rolled estimates must agree with independently cold-started ones
        rng = np.random.default_rng(31)
        r = rng.normal(0.0, 0.01, 25)
        spec = VarModelSpec("M2", window=10, shape=(3, 8))
        opts = CalibrationOptions(tol_rel=1e-9, max_iter=8000)
        rolled = rolling_var(r, spec, options=opts)
        cold = np.array([
            _VarEngine(spec, opts).estimate(r[k:k + 10]) for k in range(15)
        ])
        assert_allclose(rolled.var, cold, rtol=1e-5, atol=1e-8)

    def test_series_too_short(self):
        with pytest.raises(InsufficientSample):
            rolling_var(np.zeros(150), VarModelSpec("M1"))


class TestBacktests:
    def test_null_pof_rejection_rate(self):
        rng = np.random.default_rng(33)
        n_rep, n, alpha = 1000, 250, 0.95
        rejections = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", VacuousTestWarning)
            for _ in range(n_rep):
                e = rng.random(n) < (1 - alpha)
                report = backtest_suite(e, alpha)
                rejections += int(not report.tests["POF"].passed)
        rate = rejections / n_rep
        band = 3 * math.sqrt(0.05 * 0.95 / n_rep)
        assert abs(rate - 0.05) <= band + 0.02  # chi-square discreteness slack

    def test_clustered_exceptions_fail_independence(self):
        e = np.array([False] * 20 + [True] * 10 + [False] * 10)
        report = backtest_suite(e, alpha=0.95)
        cci = report.tests["CCI"]
        assert not cci.passed
        # hand-computed two-state transition likelihood ratio
        n00, n01, n10, n11 = 28, 1, 1, 9
        pi01, pi11 = n01 / (n00 + n01), n11 / (n10 + n11)
        pi = (n01 + n11) / 39
        ll_alt = (xlogy(n00, 1 - pi01) + xlogy(n01, pi01)
                  + xlogy(n10, 1 - pi11) + xlogy(n11, pi11))
        ll_null = xlogy(n00 + n10, 1 - pi) + xlogy(n01 + n11, pi)
        assert_allclose(cci.statistic, 2 * (ll_alt - ll_null), rtol=1e-12)
        assert_allclose(cci.p_value, chi2.sf(cci.statistic, 1), rtol=1e-12)

    def test_triple_rate_trips_count_tests(self):
        rng = np.random.default_rng(37)
        e = rng.random(250) < 0.15  # three times the nominal 5%
        report = backtest_suite(e, alpha=0.95)
        assert report.tests["TrafficLight"].zone == "red"
        assert not report.tests["TrafficLight"].passed
        assert not report.tests["Binomial"].passed

    def test_zero_exceptions_vacuous_passes(self):
        e = np.zeros(100, dtype=bool)
        with pytest.warns(VacuousTestWarning):
            report = backtest_suite(e, alpha=0.95)
        for name in ("TUFF", "TBF", "TBFI"):
            outcome = report.tests[name]
            assert outcome.passed and outcome.vacuous
            assert outcome.statistic is None
        # too few exceptions is still miscoverage: POF legitimately rejects
        assert report.tests["POF"].statistic > 0.0
        assert report.exception_count == 0

    def test_single_exception_leaves_tbfi_vacuous(self):
        e = np.zeros(60, dtype=bool)
        e[30] = True
        with pytest.warns(VacuousTestWarning):
            report = backtest_suite(e, alpha=0.95)
        assert report.tests["TBFI"].vacuous
        assert not report.tests["TUFF"].vacuous
        assert not report.tests["TBF"].vacuous
        # the only gap is the time to first failure, so TBF == TUFF here
        assert_allclose(report.tests["TBF"].statistic,
                        report.tests["TUFF"].statistic, rtol=1e-12)

    def test_identical_series_identical_reports(self):
        rng = np.random.default_rng(41)
        e = rng.random(300) < 0.05
        r1 = backtest_suite(e, alpha=0.95)
        r2 = backtest_suite(e.copy(), alpha=0.95)
        assert r1.to_json_dict() == r2.to_json_dict()

    def test_input_validation(self):
        with pytest.raises(EmptyInput):
            backtest_suite(np.array([], dtype=bool), alpha=0.95)
        with pytest.raises(InsufficientSample):
            backtest_suite(np.zeros(20, dtype=bool), alpha=0.95)
        with pytest.raises(ShapeMismatch):
            backtest_suite(np.zeros(50, dtype=bool), alpha=1.5)


class TestOutOfSample:
    def test_zero_returns_report_zero_risk_and_null_sharpe(self):
        returns = np.zeros((4, 150))
        tables = out_of_sample_eval(returns, [3], [0.5], horizon=30, seed=1)
        row = tables.risk_table[0]
        assert row["mean"] == 0.0
        assert row["n_degenerate"] == row["n_windows"]
        assert tables.sharpe_table[0]["mean"] is None

    def test_table_structure_and_determinism(self):
        rng = np.random.default_rng(45)
        returns = rng.standard_normal((12, 400)) * 0.01
        t1 = out_of_sample_eval(returns, [6], [0.5], horizon=30, seed=7)
        t2 = out_of_sample_eval(returns, [6], [0.5], horizon=30, seed=7)
        assert t1.to_json_dict() == t2.to_json_dict()
        row = t1.risk_table[0]
        assert row["n_windows"] == 400 // (12 + 30)
        assert row["band_lo"] <= row["mean"] <= row["band_hi"]
        sharpe = t1.sharpe_table[0]
        assert sharpe["band_lo"] <= sharpe["mean"] <= sharpe["band_hi"]

    def test_detrending_reduces_risk_on_factor_market(self):
        rng = np.random.default_rng(49)
        n, t = 20, 600
        beta = rng.uniform(0.5, 1.5, n)
        factor = rng.standard_normal(t) * 0.02
        noise = rng.standard_normal((n, t)) * 0.01
        returns = beta[:, None] * factor[None, :] + noise
        spikes = rng.random((n, t)) < 0.01
        returns = np.where(spikes, returns + np.sign(returns) * 0.08, returns)
        raw = out_of_sample_eval(returns, [10], [2 / 3], horizon=30, seed=3)
        det = out_of_sample_eval(returns, [10], [2 / 3], horizon=30, seed=3,
                                 detrend=True)
        assert det.risk_table[0]["mean"] < raw.risk_table[0]["mean"]

    def test_insufficient_history(self):
        rng = np.random.default_rng(53)
        with pytest.raises(InsufficientSample):
            out_of_sample_eval(rng.standard_normal((6, 50)), [4], [0.5],
                               horizon=30, seed=1)

    def test_argument_validation(self):
        rng = np.random.default_rng(57)
        returns = rng.standard_normal((6, 200))
        with pytest.raises(ShapeMismatch):
            out_of_sample_eval(returns, [10], [0.5], seed=1)  # too many assets
        with pytest.raises(ShapeMismatch):
            out_of_sample_eval(returns, [4], [1.5], seed=1)  # q outside (0, 1)
