"""Tests for the command-line front end.

Each command is driven through ``main(argv)`` against files in a temp
directory; assertions cover exit codes, artifact content, manifest hashes,
determinism under a fixed seed, and the configuration precedence rules.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from matens.cli import main
from matens.multivariate import ConstraintSpec, EnsembleModel, MultiplierSet
from matens.univariate import UnivariateModel


def save_matrix_csv(path, values):
    np.savetxt(path, np.asarray(values, dtype=float), delimiter=",", fmt="%.12g")


def centered_matrix(n, t, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(0.0, 1.0, (n, t))
    return m - m.mean(axis=1, keepdims=True)


def no_missing_model(n, t, seed):
    rng = np.random.default_rng(seed)
    ms = MultiplierSet(
        variant="no_missing",
        alpha_row=rng.uniform(-0.4, 0.4, n), beta_row=np.zeros(n),
        gamma_row=rng.uniform(0.5, 1.2, n), sigma_row=rng.uniform(0.5, 1.2, n),
        alpha_col=rng.uniform(-0.4, 0.4, t), beta_col=np.zeros(t),
        gamma_col=rng.uniform(0.5, 1.2, t), sigma_col=rng.uniform(0.5, 1.2, t),
    )
    spec = ConstraintSpec(
        variant="no_missing", families=("alpha", "gamma", "sigma"),
        n_rows=n, n_cols=t,
    )
    return EnsembleModel(spec=spec, multipliers=ms)


def save_model(path, model):
    Path(path).write_text(json.dumps(model.to_json_dict()))


def read_manifest(outdir):
    return json.loads((Path(outdir) / "manifest.json").read_text())


class TestCalibrateCommand:
    def test_toy_matrix_converges_with_small_residuals(self, tmp_path):
        data = tmp_path / "m.csv"
        save_matrix_csv(data, centered_matrix(3, 4, seed=5))
        out = tmp_path / "run"
        code = main([
            "calibrate", "--input", str(data), "--variant", "no-missing",
            "--output-dir", str(out),
        ])
        assert code == 0
        report = json.loads((out / "calibration.json").read_text())
        assert report["converged"] is True
        assert report["max_rel_constraint_err"] < 1e-6
        model = EnsembleModel.from_json_dict(
            json.loads((out / "model.json").read_text())
        )
        assert model.shape == (3, 4)
        names = {rec["path"] for rec in read_manifest(out)["outputs"]}
        assert {"model.json", "calibration.json"} <= names

    def test_univariate_family_round_trips(self, tmp_path):
        rng = np.random.default_rng(11)
        data = tmp_path / "v.csv"
        save_matrix_csv(data, rng.normal(0.0, 1.0, (1, 400)))
        out = tmp_path / "run"
        code = main([
            "calibrate", "--input", str(data), "--family", "H1",
            "--output-dir", str(out),
        ])
        assert code == 0
        model = UnivariateModel.from_json_dict(
            json.loads((out / "model.json").read_text())
        )
        q = model.quantile(np.array([0.5]))
        assert np.isfinite(q).all()
        report = json.loads((out / "calibration.json").read_text())
        assert sum(report["targets"]["counts"]) == 400

    def test_missing_input_names_the_path(self, tmp_path, capsys):
        code = main([
            "calibrate", "--input", str(tmp_path / "absent.csv"),
            "--variant", "no-missing", "--output-dir", str(tmp_path / "r"),
        ])
        assert code == 1
        assert "absent.csv" in capsys.readouterr().err

    def test_zero_row_is_infeasible(self, tmp_path):
        values = centered_matrix(3, 6, seed=1)
        values[2] = 0.0
        data = tmp_path / "z.csv"
        save_matrix_csv(data, values)
        with pytest.warns(Warning):
            code = main([
                "calibrate", "--input", str(data), "--variant", "no-missing",
                "--uncentered", "--output-dir", str(tmp_path / "r"),
            ])
        assert code == 3

    def test_exactly_one_ensemble_kind_is_required(self, tmp_path, capsys):
        data = tmp_path / "m.csv"
        save_matrix_csv(data, centered_matrix(3, 4, seed=2))
        neither = main([
            "calibrate", "--input", str(data), "--output-dir", str(tmp_path / "a"),
        ])
        both = main([
            "calibrate", "--input", str(data), "--family", "H1",
            "--variant", "no-missing", "--output-dir", str(tmp_path / "b"),
        ])
        capsys.readouterr()
        assert neither == 1 and both == 1

    def test_exhausted_budget_exits_unconverged(self, tmp_path):
        data = tmp_path / "m.csv"
        save_matrix_csv(data, centered_matrix(6, 30, seed=3))
        code = main([
            "calibrate", "--input", str(data), "--variant", "no-missing",
            "--tol", "1e-15", "--max-iter", "2", "--output-dir",
            str(tmp_path / "r"),
        ])
        assert code == 2
        report = json.loads((tmp_path / "r" / "calibration.json").read_text())
        assert report["converged"] is False


class TestSampleCommand:
    def test_univariate_draws_are_byte_identical(self, tmp_path):
        data = tmp_path / "v.csv"
        save_matrix_csv(
            data, np.random.default_rng(4).normal(0.0, 1.0, (1, 300))
        )
        fit = tmp_path / "fit"
        assert main([
            "calibrate", "--input", str(data), "--family", "SUMVAR",
            "--output-dir", str(fit),
        ]) == 0
        runs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main([
                "sample", "--model-file", str(fit / "model.json"),
                "--n", "50", "--seed", "7", "--output-dir", str(out),
            ]) == 0
            runs.append((out / "samples.csv").read_bytes())
        assert runs[0] == runs[1]

    def test_matrix_samples_in_long_format(self, tmp_path):
        model = no_missing_model(3, 5, seed=9)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "sample", "--model-file", str(mfile), "--n", "4", "--seed", "1",
            "--output-dir", str(out),
        ]) == 0
        lines = (out / "samples.csv").read_text().strip().splitlines()
        assert lines[0] == "replicate,row,col,value"
        assert len(lines) == 1 + 4 * 3 * 5
        reps = {int(line.split(",")[0]) for line in lines[1:]}
        assert reps == {0, 1, 2, 3}

    def test_auto_generated_seed_is_recorded(self, tmp_path):
        model = no_missing_model(2, 4, seed=9)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "sample", "--model-file", str(mfile), "--n", "2",
            "--output-dir", str(out),
        ]) == 0
        assert isinstance(read_manifest(out)["config"]["seed"], int)


class TestValidateCommand:
    def test_model_generated_data_is_compatible(self, tmp_path):
        model = no_missing_model(8, 60, seed=21)
        data = model.sample(seed=22)
        dfile = tmp_path / "d.csv"
        data.to_csv(dfile)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "validate", "--input", str(dfile), "--model-file", str(mfile),
            "--n-rep", "120", "--seed", "5", "--output-dir", str(out),
        ]) == 0
        report = json.loads((out / "validation.json").read_text())
        for moment in ("mean", "variance"):
            frac = report["moments"][moment]["fraction_inside_90pct_band"]
            assert frac >= 0.6
        assert report["ks"]["global"]["reject"] is False
        mean_csv = (out / "validate_mean.csv").read_text().strip().splitlines()
        assert len(mean_csv) == 1 + 8


class TestAnomalyCommand:
    def test_injected_spike_is_flagged(self, tmp_path):
        model = no_missing_model(6, 40, seed=31)
        data = model.sample(seed=32)
        values = data.values.copy()
        values[2, 7] = 60.0
        dfile = tmp_path / "d.csv"
        save_matrix_csv(dfile, values)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "anomaly", "--input", str(dfile), "--model-file", str(mfile),
            "--output-dir", str(out),
        ]) == 0
        report = json.loads((out / "anomaly.json").read_text())
        assert [2, 7] in report["flags"]
        lines = (out / "anomaly.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + len(report["intervals"])


class TestSpectrumCommand:
    def test_empirical_and_noise_densities_without_model(self, tmp_path):
        dfile = tmp_path / "d.csv"
        save_matrix_csv(dfile, centered_matrix(8, 80, seed=41))
        out = tmp_path / "run"
        assert main([
            "spectrum", "--input", str(dfile), "--output-dir", str(out),
        ]) == 0
        summary = json.loads((out / "spectrum.json").read_text())
        assert summary["q"] == pytest.approx(0.1)
        assert "mp_edges" in summary and "ensemble" not in summary
        header, first = (out / "spectrum.csv").read_text().splitlines()[:2]
        assert header == "lambda,empirical,ensemble,marchenko_pastur"
        assert first.split(",")[2] == ""  # no ensemble column without a model

    def test_model_overlay_adds_replicate_spectra(self, tmp_path):
        model = no_missing_model(6, 50, seed=42)
        data = model.sample(seed=43)
        dfile = tmp_path / "d.csv"
        data.to_csv(dfile)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "spectrum", "--input", str(dfile), "--model-file", str(mfile),
            "--n-rep", "30", "--seed", "2", "--output-dir", str(out),
        ]) == 0
        summary = json.loads((out / "spectrum.json").read_text())
        ens = summary["ensemble"]
        n_used = len(ens["lambda_max"])
        assert n_used + ens["n_failed"] == 30
        lines = (out / "lambda_max.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + n_used


class TestPortfolioCommand:
    def test_weights_sum_to_one(self, tmp_path):
        rng = np.random.default_rng(51)
        dfile = tmp_path / "r.csv"
        save_matrix_csv(dfile, rng.normal(0.0, 0.01, (6, 90)))
        out = tmp_path / "run"
        assert main([
            "portfolio", "--input", str(dfile), "--output-dir", str(out),
        ]) == 0
        weights = json.loads((out / "portfolio.json").read_text())["weights"]
        assert len(weights) == 6
        assert sum(weights.values()) == pytest.approx(1.0, abs=1e-9)

    def test_rolling_evaluation_writes_tables(self, tmp_path):
        rng = np.random.default_rng(52)
        dfile = tmp_path / "r.csv"
        save_matrix_csv(dfile, rng.normal(0.0, 0.01, (8, 240)))
        out = tmp_path / "run"
        assert main([
            "portfolio", "--input", str(dfile), "--evaluate",
            "--sizes", "4", "--q-ratios", "0.5", "--horizon", "10",
            "--seed", "3", "--output-dir", str(out),
        ]) == 0
        tables = json.loads((out / "portfolio_eval.json").read_text())
        assert len(tables["risk"]) == 1
        assert tables["risk"][0]["portfolio_size"] == 4
        lines = (out / "risk_table.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_evaluate_requires_sizes_and_ratios(self, tmp_path, capsys):
        dfile = tmp_path / "r.csv"
        save_matrix_csv(
            dfile, np.random.default_rng(0).normal(0.0, 0.01, (4, 60))
        )
        code = main([
            "portfolio", "--input", str(dfile), "--evaluate",
            "--output-dir", str(tmp_path / "x"),
        ])
        capsys.readouterr()
        assert code == 1


class TestVarCommand:
    def test_rolling_var_with_backtests(self, tmp_path):
        rng = np.random.default_rng(61)
        dfile = tmp_path / "s.csv"
        save_matrix_csv(dfile, rng.normal(0.0, 0.01, 260).reshape(-1, 1))
        out = tmp_path / "run"
        assert main([
            "var", "--input", str(dfile), "--model", "M1",
            "--window", "150", "--alpha", "0.95", "--output-dir", str(out),
        ]) == 0
        report = json.loads((out / "var.json").read_text())
        assert report["spec"]["kind"] == "M1"
        assert report["n_estimates"] == 110
        lines = (out / "var.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 110
        n_exc = sum(int(line.split(",")[3]) for line in lines[1:])
        assert n_exc == report["n_exceptions"]
        assert set(report["backtests"]["tests"]) == {
            "TrafficLight", "Binomial", "POF", "TUFF", "CC", "CCI",
            "TBF", "TBFI",
        }

    def test_embedding_estimator_accepts_shape(self, tmp_path):
        rng = np.random.default_rng(62)
        dfile = tmp_path / "s.csv"
        save_matrix_csv(dfile, rng.normal(0.0, 0.01, 45).reshape(-1, 1))
        out = tmp_path / "run"
        assert main([
            "var", "--input", str(dfile), "--model", "M2", "--window", "10",
            "--shape", "3x8", "--alpha", "0.95", "--output-dir", str(out),
        ]) == 0
        report = json.loads((out / "var.json").read_text())
        assert report["spec"]["shape"] == [3, 8]
        assert report["n_estimates"] == 35

    def test_matrix_input_is_rejected(self, tmp_path, capsys):
        dfile = tmp_path / "m.csv"
        save_matrix_csv(dfile, centered_matrix(3, 30, seed=0))
        code = main([
            "var", "--input", str(dfile), "--model", "M1", "--window", "10",
            "--output-dir", str(tmp_path / "x"),
        ])
        capsys.readouterr()
        assert code == 1


class TestOracleCommand:
    def test_matrix_log_normalizer_cross_check(self, tmp_path):
        model = no_missing_model(2, 3, seed=71)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "oracle", "--model-file", str(mfile), "--output-dir", str(out),
        ]) == 0
        report = json.loads((out / "oracle.json").read_text())
        assert report["rel_err"] < 1e-4

    def test_oversized_model_is_an_input_error(self, tmp_path, capsys):
        model = no_missing_model(4, 4, seed=72)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        code = main([
            "oracle", "--model-file", str(mfile),
            "--output-dir", str(tmp_path / "x"),
        ])
        capsys.readouterr()
        assert code == 1


class TestConfigPrecedence:
    def test_cli_flag_beats_config_file(self, tmp_path):
        model = no_missing_model(2, 4, seed=81)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 3, "n": 4}))
        out = tmp_path / "run"
        assert main([
            "sample", "--model-file", str(mfile), "--config", str(cfg),
            "--seed", "9", "--output-dir", str(out),
        ]) == 0
        config = read_manifest(out)["config"]
        assert config["seed"] == 9  # CLI wins
        assert config["settings"]["n"] == 4  # config file beats the default

    def test_config_file_can_supply_the_input(self, tmp_path):
        data = tmp_path / "m.csv"
        save_matrix_csv(data, centered_matrix(3, 4, seed=82))
        cfg = tmp_path / "cfg.json"
        cfg.write_text(
            json.dumps({"input": str(data), "variant": "no-missing"})
        )
        out = tmp_path / "run"
        assert main([
            "calibrate", "--config", str(cfg), "--output-dir", str(out),
        ]) == 0
        assert (out / "model.json").exists()

    def test_format_flag_limits_artifacts(self, tmp_path):
        model = no_missing_model(2, 4, seed=83)
        mfile = tmp_path / "model.json"
        save_model(mfile, model)
        out = tmp_path / "run"
        assert main([
            "sample", "--model-file", str(mfile), "--n", "2", "--seed", "1",
            "--format", "json", "--output-dir", str(out),
        ]) == 0
        assert (out / "samples.json").exists()
        assert not (out / "samples.csv").exists()


class TestManifest:
    def test_every_artifact_is_listed_with_its_hash(self, tmp_path):
        data = tmp_path / "m.csv"
        save_matrix_csv(data, centered_matrix(4, 20, seed=91))
        out = tmp_path / "run"
        assert main([
            "calibrate", "--input", str(data), "--variant", "no-missing",
            "--seed", "2", "--output-dir", str(out),
        ]) == 0
        manifest = read_manifest(out)
        listed = {rec["path"] for rec in manifest["outputs"]}
        on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
        assert listed == on_disk
        for rec in manifest["outputs"]:
            digest = hashlib.sha256((out / rec["path"]).read_bytes()).hexdigest()
            assert digest == rec["sha256"]
        assert manifest["config"]["command"] == "calibrate"
        assert manifest["config"]["seed"] == 2
