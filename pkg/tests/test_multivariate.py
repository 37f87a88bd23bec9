import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from matens.calibration import brute_force_log_partition
from matens.core import DataMatrix, MarginConstraints
from matens.errors import (
    DivergentPartition,
    InfeasibleConstraints,
    OracleTooLarge,
    ShapeMismatch,
)
from matens.multivariate import (
    ClampSet,
    ConstraintSpec,
    EnsembleModel,
    MultiplierSet,
    OutOfPhysicalRegion,
    cell_partition,
    physical_quantities,
)


def random_multipliers(rng, n, t, variant="with_missing"):
    """Admissible random multipliers: every pairwise rate sum positive."""
    kw = dict(
        alpha_row=rng.uniform(-0.8, 0.8, n),
        alpha_col=rng.uniform(-0.8, 0.8, t),
        beta_row=rng.uniform(-0.8, 0.8, n),
        beta_col=rng.uniform(-0.8, 0.8, t),
        gamma_row=rng.uniform(0.3, 1.2, n),
        gamma_col=rng.uniform(0.3, 1.2, t),
        sigma_row=rng.uniform(0.3, 1.2, n),
        sigma_col=rng.uniform(0.3, 1.2, t),
    )
    if variant == "no_missing":
        kw["beta_row"] = np.zeros(n)
        kw["beta_col"] = np.zeros(t)
    return MultiplierSet(variant=variant, **kw)


def random_model(rng, n, t, variant="with_missing"):
    spec = ConstraintSpec(
        variant=variant,
        families=("alpha", "beta", "gamma", "sigma")
        if variant == "with_missing"
        else ("alpha", "gamma", "sigma"),
        n_rows=n,
        n_cols=t,
    )
    return EnsembleModel(spec=spec, multipliers=random_multipliers(rng, n, t, variant))


def hand_cell_partition(ms, i, t):
    """1 + e^-a/g + e^-b/s (drop the 1 for no_missing), written out longhand."""
    a = ms.alpha_row[i] + ms.alpha_col[t]
    b = ms.beta_row[i] + ms.beta_col[t]
    g = ms.gamma_row[i] + ms.gamma_col[t]
    s = ms.sigma_row[i] + ms.sigma_col[t]
    z = math.exp(-a) / g + math.exp(-b) / s
    if ms.variant == "with_missing":
        z += 1.0
    return z


class TestMultiplierSet:
    def test_pair_sums(self):
        ms = MultiplierSet.zeros("with_missing", 2, 3)
        ms = MultiplierSet(
            variant="with_missing",
            alpha_row=[1.0, 2.0], alpha_col=[10.0, 20.0, 30.0],
            beta_row=[0.0, 0.0], beta_col=[0.0, 0.0, 0.0],
            gamma_row=[1.0, 1.0], gamma_col=[1.0, 1.0, 1.0],
            sigma_row=[1.0, 1.0], sigma_col=[1.0, 1.0, 1.0],
        )
        assert_allclose(ms.pair_sums("alpha"), [[11, 21, 31], [12, 22, 32]])
        assert ms.shape == (2, 3)

    def test_no_missing_rejects_negative_count_multipliers(self):
        with pytest.raises(ShapeMismatch):
            MultiplierSet(
                variant="no_missing",
                alpha_row=[0.0], alpha_col=[0.0],
                beta_row=[0.5], beta_col=[0.0],
                gamma_row=[1.0], gamma_col=[0.0],
                sigma_row=[1.0], sigma_col=[0.0],
            )

    def test_json_roundtrip(self):
        rng = np.random.default_rng(7)
        ms = random_multipliers(rng, 3, 2)
        back = MultiplierSet.from_json_dict(ms.to_json_dict())
        assert_allclose(back.gamma_row, ms.gamma_row)
        assert_allclose(back.alpha_col, ms.alpha_col)
        assert back.variant == ms.variant


class TestConstraintSpec:
    def test_magnitude_families_mandatory(self):
        with pytest.raises(ShapeMismatch):
            ConstraintSpec(
                variant="with_missing", families=("alpha", "gamma"),
                n_rows=2, n_cols=2,
            )

    def test_no_missing_forbids_beta(self):
        with pytest.raises(ShapeMismatch):
            ConstraintSpec(
                variant="no_missing",
                families=("alpha", "beta", "gamma", "sigma"),
                n_rows=2, n_cols=2,
            )

    def test_constrained_cols_default_and_json(self):
        spec = ConstraintSpec(
            variant="with_missing",
            families=("gamma", "sigma"),
            n_rows=2, n_cols=4,
            constrained_cols=[True, True, True, False],
        )
        assert not spec.all_cols_constrained
        back = ConstraintSpec.from_json_dict(spec.to_json_dict())
        np.testing.assert_array_equal(back.constrained_cols, spec.constrained_cols)


class TestClampSet:
    @staticmethod
    def margins(**over):
        base = dict(
            n_plus_row=[2.0, 0.0], n_minus_row=[1.0, 1.0],
            s_plus_row=[3.0, 0.0], s_minus_row=[0.5, 0.5],
            n_obs_row=[3.0, 1.0],
            n_plus_col=[1.0, 1.0], n_minus_col=[1.0, 1.0],
            s_plus_col=[1.5, 1.5], s_minus_col=[0.5, 0.5],
            n_obs_col=[2.0, 2.0],
        )
        base.update(over)
        return MarginConstraints(**base)

    def test_zero_count_zero_sum_clamps(self):
        clamps = ClampSet.from_margins(self.margins())
        np.testing.assert_array_equal(clamps.row_plus, [False, True])
        assert not clamps.row_minus.any()
        assert not clamps.plus_active()[1].any()
        assert clamps.minus_active().all()

    def test_zero_count_positive_sum_is_infeasible(self):
        with pytest.raises(InfeasibleConstraints):
            ClampSet.from_margins(self.margins(s_plus_row=[3.0, 0.7]))

    def test_positive_count_zero_sum_is_infeasible(self):
        with pytest.raises(InfeasibleConstraints):
            ClampSet.from_margins(
                self.margins(n_plus_row=[2.0, 1.0], s_plus_row=[3.0, 0.0])
            )


class TestCellPartition:
    def test_single_cell_with_missing(self):
        ms = MultiplierSet(
            variant="with_missing",
            alpha_row=[0.3], alpha_col=[0.0],
            beta_row=[-0.2], beta_col=[0.0],
            gamma_row=[0.7], gamma_col=[0.4],
            sigma_row=[0.5], sigma_col=[0.25],
        )
        spec = ConstraintSpec(
            variant="with_missing",
            families=("alpha", "beta", "gamma", "sigma"),
            n_rows=1, n_cols=1,
        )
        model = EnsembleModel(spec=spec, multipliers=ms)
        want = 1.0 + math.exp(-0.3) / 1.1 + math.exp(0.2) / 0.75
        assert_allclose(cell_partition(model, 0, 0), want, rtol=1e-14)
        assert_allclose(model.log_partition(), math.log(want), rtol=1e-14)

    def test_single_cell_no_missing_drops_the_empty_state(self):
        ms = MultiplierSet(
            variant="no_missing",
            alpha_row=[0.3], alpha_col=[0.0],
            beta_row=[0.0], beta_col=[0.0],
            gamma_row=[0.7], gamma_col=[0.4],
            sigma_row=[0.5], sigma_col=[0.25],
        )
        spec = ConstraintSpec(
            variant="no_missing",
            families=("alpha", "gamma", "sigma"),
            n_rows=1, n_cols=1,
        )
        model = EnsembleModel(spec=spec, multipliers=ms)
        want = math.exp(-0.3) / 1.1 + 1.0 / 0.75
        assert_allclose(cell_partition(model, 0, 0), want, rtol=1e-14)

    def test_partition_factorizes_over_cells(self):
        rng = np.random.default_rng(11)
        model = random_model(rng, 2, 3)
        total = sum(
            math.log(hand_cell_partition(model.multipliers, i, t))
            for i in range(2)
            for t in range(3)
        )
        assert_allclose(model.log_partition(), total, rtol=1e-13)

    def test_nonpositive_rate_on_live_cell_diverges(self):
        ms = MultiplierSet(
            variant="with_missing",
            alpha_row=[0.0], alpha_col=[0.0],
            beta_row=[0.0], beta_col=[0.0],
            gamma_row=[0.5], gamma_col=[-0.5],
            sigma_row=[1.0], sigma_col=[0.0],
        )
        spec = ConstraintSpec(
            variant="with_missing",
            families=("alpha", "beta", "gamma", "sigma"),
            n_rows=1, n_cols=1,
        )
        with pytest.raises(DivergentPartition):
            EnsembleModel(spec=spec, multipliers=ms)


class TestBruteForceOracle:
    """The closed-form normalizer against state enumeration + quadrature."""

    def test_agrees_with_closed_form_with_missing(self):
        rng = np.random.default_rng(23)
        for n, t in [(1, 1), (2, 2), (2, 3), (1, 5)]:
            model = random_model(rng, n, t, "with_missing")
            got = brute_force_log_partition(model)
            want = model.log_partition()
            assert abs(got - want) <= 1e-4 * max(1.0, abs(want))

    def test_agrees_with_closed_form_no_missing(self):
        rng = np.random.default_rng(29)
        for n, t in [(1, 1), (2, 2), (3, 2)]:
            model = random_model(rng, n, t, "no_missing")
            got = brute_force_log_partition(model)
            want = model.log_partition()
            assert abs(got - want) <= 1e-4 * max(1.0, abs(want))

    def test_two_resolutions_agree(self):
        rng = np.random.default_rng(31)
        model = random_model(rng, 2, 2)
        coarse = brute_force_log_partition(model, resolution=801)
        fine = brute_force_log_partition(model, resolution=3201)
        assert abs(coarse - fine) < 1e-6

    def test_size_guard(self):
        rng = np.random.default_rng(37)
        model = random_model(rng, 3, 3)
        with pytest.raises(OracleTooLarge):
            brute_force_log_partition(model)


class TestMarginals:
    def test_occupancy_probabilities_normalize(self):
        rng = np.random.default_rng(41)
        model = random_model(rng, 4, 5)
        c = model.cells
        assert_allclose(c.p_plus + c.p_minus + c.p_missing, 1.0, atol=1e-12)

    def test_no_missing_has_no_empty_state(self):
        rng = np.random.default_rng(43)
        model = random_model(rng, 3, 3, "no_missing")
        c = model.cells
        assert np.all(c.p_missing == 0.0)
        assert_allclose(c.p_plus + c.p_minus, 1.0, atol=1e-12)

    def test_cell_mean_against_quadrature(self):
        rng = np.random.default_rng(47)
        model = random_model(rng, 2, 2)
        ms = model.multipliers
        for (i, t) in [(0, 0), (1, 1)]:
            a = ms.alpha_row[i] + ms.alpha_col[t]
            b = ms.beta_row[i] + ms.beta_col[t]
            g = ms.gamma_row[i] + ms.gamma_col[t]
            s = ms.sigma_row[i] + ms.sigma_col[t]
            z = hand_cell_partition(ms, i, t)
            pos, _ = quad(lambda x: x * math.exp(-a - g * x), 0, np.inf)
            neg, _ = quad(lambda x: x * math.exp(-b + s * x), -np.inf, 0)
            assert_allclose(
                model.mean_matrix()[i, t], (pos + neg) / z, rtol=1e-9
            )
            pos2, _ = quad(lambda x: x * x * math.exp(-a - g * x), 0, np.inf)
            neg2, _ = quad(lambda x: x * x * math.exp(-b + s * x), -np.inf, 0)
            assert_allclose(
                model.second_moment_matrix()[i, t], (pos2 + neg2) / z, rtol=1e-9
            )

    def test_conditional_moments_rescale_by_observed_mass(self):
        rng = np.random.default_rng(53)
        model = random_model(rng, 3, 3)
        c = model.cells
        obs = 1.0 - c.p_missing
        assert_allclose(
            model.mean_matrix(conditional=True), model.mean_matrix() / obs
        )

    def test_expected_margins_consistency(self):
        rng = np.random.default_rng(59)
        model = random_model(rng, 3, 4)
        ms = model.multipliers
        em = model.expected_margins()
        # independent route: hand-built per-cell weights
        p_plus = np.empty((3, 4))
        w_plus = np.empty((3, 4))
        for i in range(3):
            for t in range(4):
                a = ms.alpha_row[i] + ms.alpha_col[t]
                g = ms.gamma_row[i] + ms.gamma_col[t]
                z = hand_cell_partition(ms, i, t)
                p_plus[i, t] = math.exp(-a) / g / z
                w_plus[i, t] = math.exp(-a) / g ** 2 / z
        assert_allclose(em.n_plus_row, p_plus.sum(axis=1), rtol=1e-12)
        assert_allclose(em.n_plus_col, p_plus.sum(axis=0), rtol=1e-12)
        assert_allclose(em.s_plus_row, w_plus.sum(axis=1), rtol=1e-12)
        assert_allclose(em.s_plus_col, w_plus.sum(axis=0), rtol=1e-12)


class TestLogLikelihood:
    def test_all_missing_matrix_scores_minus_log_partition(self):
        rng = np.random.default_rng(61)
        model = random_model(rng, 1, 1)
        data = DataMatrix(values=[[np.nan]], mask=[[False]])
        assert_allclose(
            model.log_likelihood_of(data), -model.log_partition(), rtol=1e-13
        )

    def test_hand_worked_density(self):
        ms = MultiplierSet(
            variant="with_missing",
            alpha_row=[0.2], alpha_col=[0.0, 0.1],
            beta_row=[0.1], beta_col=[0.0, -0.3],
            gamma_row=[0.8], gamma_col=[0.0, 0.2],
            sigma_row=[0.9], sigma_col=[0.0, 0.1],
        )
        spec = ConstraintSpec(
            variant="with_missing",
            families=("alpha", "beta", "gamma", "sigma"),
            n_rows=1, n_cols=2,
        )
        model = EnsembleModel(spec=spec, multipliers=ms)
        data = DataMatrix(values=[[1.5, np.nan]], mask=[[True, False]])
        # cell (0,0) holds +1.5: hamiltonian = a + g * 1.5
        want = -(0.2 + 0.8 * 1.5) - model.log_partition()
        assert_allclose(model.log_likelihood_of(data), want, rtol=1e-13)
        data_neg = DataMatrix(values=[[-2.0, np.nan]], mask=[[True, False]])
        want_neg = -(0.1 + 0.9 * 2.0) - model.log_partition()
        assert_allclose(model.log_likelihood_of(data_neg), want_neg, rtol=1e-13)

    def test_clamped_class_occupied_scores_zero_probability(self):
        rng = np.random.default_rng(67)
        ms = random_multipliers(rng, 2, 2)
        spec = ConstraintSpec(
            variant="with_missing",
            families=("alpha", "beta", "gamma", "sigma"),
            n_rows=2, n_cols=2,
        )
        clamps = ClampSet(
            row_plus=[True, False], row_minus=[False, False],
            col_plus=[False, False], col_minus=[False, False],
        )
        model = EnsembleModel(spec=spec, multipliers=ms, clamps=clamps)
        data = DataMatrix(
            values=[[0.5, np.nan], [np.nan, np.nan]],
            mask=[[True, False], [False, False]],
        )
        assert model.log_likelihood_of(data) == -math.inf

    def test_no_missing_rejects_missing_data(self):
        rng = np.random.default_rng(71)
        model = random_model(rng, 1, 2, "no_missing")
        data = DataMatrix(values=[[1.0, np.nan]], mask=[[True, False]])
        with pytest.raises(ShapeMismatch):
            model.log_likelihood_of(data)


class TestConditionalDistribution:
    def test_cdf_limits_and_split(self):
        rng = np.random.default_rng(73)
        model = random_model(rng, 2, 2)
        m = model.marginal(0, 1)
        obs = m.p_plus + m.p_minus
        cdf = model.cell_conditional_cdf(0, 1, np.array([-50.0, 0.0, 50.0]))
        assert cdf[0] < 1e-8
        assert_allclose(cdf[1], m.p_minus / obs, rtol=1e-12)
        assert_allclose(cdf[2], 1.0, atol=1e-12)

    def test_quantile_roundtrip(self):
        rng = np.random.default_rng(79)
        model = random_model(rng, 2, 3)
        u = np.linspace(0.01, 0.99, 23)
        for (i, t) in [(0, 0), (1, 2)]:
            x = model.cell_conditional_quantile(i, t, u)
            assert np.all(np.diff(x) >= 0)
            assert_allclose(model.cell_conditional_cdf(i, t, x), u, atol=1e-10)

    def test_quantile_levels_validated(self):
        rng = np.random.default_rng(83)
        model = random_model(rng, 1, 1)
        with pytest.raises(ShapeMismatch):
            model.cell_conditional_quantile(0, 0, np.array([1.2]))


class TestPhysicalQuantities:
    def test_boltzmann_reconstruction_identity(self):
        """The three-level description reproduces the cell normalizer exactly."""
        rng = np.random.default_rng(89)
        model = random_model(rng, 3, 3)
        ms = model.multipliers
        for i in range(3):
            for t in range(3):
                pq = physical_quantities(model, i, t)
                assert not isinstance(pq, OutOfPhysicalRegion)
                z = (
                    1.0
                    + math.exp((pq.chem_potential_plus - pq.energy_level) / pq.temperature)
                    + math.exp((pq.chem_potential_minus - pq.energy_level) / pq.temperature)
                )
                assert_allclose(z, cell_partition(model, i, t), rtol=1e-10)
                # term-by-term: the positive-state weight is e^-a/g
                a = ms.alpha_row[i] + ms.alpha_col[t]
                g = ms.gamma_row[i] + ms.gamma_col[t]
                assert_allclose(
                    math.exp((pq.chem_potential_plus - pq.energy_level) / pq.temperature),
                    math.exp(-a) / g,
                    rtol=1e-10,
                )

    def test_chemical_potentials_are_symmetric(self):
        rng = np.random.default_rng(97)
        model = random_model(rng, 2, 2)
        pq = physical_quantities(model, 1, 0)
        assert pq.chem_potential_plus == -pq.chem_potential_minus

    def test_unit_rate_product_has_no_finite_temperature(self):
        ms = MultiplierSet(
            variant="with_missing",
            alpha_row=[0.0], alpha_col=[0.0],
            beta_row=[0.0], beta_col=[0.0],
            gamma_row=[2.0], gamma_col=[0.0],
            sigma_row=[0.5], sigma_col=[0.0],
        )
        spec = ConstraintSpec(
            variant="with_missing",
            families=("alpha", "beta", "gamma", "sigma"),
            n_rows=1, n_cols=1,
        )
        model = EnsembleModel(spec=spec, multipliers=ms)
        pq = physical_quantities(model, 0, 0)
        assert isinstance(pq, OutOfPhysicalRegion)
        assert "temperature" in pq.reason

    def test_no_missing_is_out_of_region(self):
        rng = np.random.default_rng(101)
        model = random_model(rng, 1, 1, "no_missing")
        assert isinstance(physical_quantities(model, 0, 0), OutOfPhysicalRegion)

    def test_temperature_matches_rate_product(self):
        rng = np.random.default_rng(103)
        model = random_model(rng, 2, 2)
        ms = model.multipliers
        pq = physical_quantities(model, 0, 0)
        g = ms.gamma_row[0] + ms.gamma_col[0]
        s = ms.sigma_row[0] + ms.sigma_col[0]
        assert_allclose(pq.temperature, 1.0 / math.log(g * s), rtol=1e-12)


class TestSampling:
    def test_seed_reproducibility(self):
        rng = np.random.default_rng(107)
        model = random_model(rng, 4, 6)
        a = model.sample(seed=2024)
        b = model.sample(seed=2024)
        c = model.sample(seed=2025)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert_allclose(
            a.values[a.mask], b.values[b.mask], rtol=0, atol=0
        )
        assert not np.array_equal(a.values, c.values, equal_nan=True)

    def test_aggregate_moments_within_four_standard_errors(self):
        rng = np.random.default_rng(109)
        model = random_model(rng, 20, 25)
        n_rep = 400
        totals = np.empty(n_rep)
        missing = np.empty(n_rep)
        for r in range(n_rep):
            draw = model.sample(seed=1000 + r)
            totals[r] = np.nansum(draw.values)
            missing[r] = draw.n_rows * draw.n_cols - draw.n_observed
        mean_want = model.mean_matrix().sum()
        var_want = model.variance_matrix().sum()
        se = math.sqrt(var_want / n_rep)
        assert abs(totals.mean() - mean_want) < 4 * se
        p0 = model.cells.p_missing
        miss_want = p0.sum()
        miss_se = math.sqrt((p0 * (1 - p0)).sum() / n_rep)
        assert abs(missing.mean() - miss_want) < 4 * miss_se

    def test_no_missing_draws_are_fully_observed(self):
        rng = np.random.default_rng(113)
        model = random_model(rng, 5, 5, "no_missing")
        draw = model.sample(seed=3)
        assert draw.mask.all()


class TestSerialization:
    def test_model_json_roundtrip(self):
        rng = np.random.default_rng(127)
        model = random_model(rng, 2, 3)
        back = EnsembleModel.from_json_dict(model.to_json_dict())
        assert_allclose(back.log_partition(), model.log_partition(), rtol=1e-15)
        assert_allclose(back.multipliers.sigma_col, model.multipliers.sigma_col)
        assert back.spec.families == model.spec.families
