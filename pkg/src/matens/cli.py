"""Command-line front end for the ensemble pipelines.

Every subcommand reads plain CSV/JSON inputs, runs one pipeline, and writes
machine-readable artifacts: JSON reports carrying the full result and CSV
series ready for plotting.  A run manifest (``manifest.json``) lists every
artifact with its SHA-256 content hash together with the effective
configuration, so a run can be audited and reproduced byte for byte.

Configuration precedence is CLI flags > config file (``--config``, JSON
object keyed by flag name) > built-in defaults.  The random seed is always
explicit in outputs: when no seed is given one is generated and recorded.
Exit codes: 0 success (calibration converged), 1 input or usage error,
2 calibration unconverged, 3 infeasible constraints.

Plots are emitted as data (CSV series), not rendered images; point any
plotting tool at the CSV files named in the manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .calibration import (
    EXIT_INFEASIBLE,
    EXIT_UNCONVERGED,
    CalibrationOptions,
    brute_force_log_partition,
    calibrate,
    fit_univariate,
)
from .core import DataMatrix, center_rows, compute_margins, load_matrix
from .errors import (
    InfeasibleConstraints,
    MatensError,
    ShapeMismatch,
    Unconverged,
)
from .finance import (
    VarModelSpec,
    backtest_suite,
    markowitz_weights,
    out_of_sample_eval,
    rolling_var,
)
from .multivariate import ConstraintSpec, EnsembleModel
from .statistics import (
    anomaly_scan,
    correlation_matrix,
    ensemble_spectrum,
    ks_compare,
    moment_distribution,
    mp_density,
    mp_edges,
)
from .univariate import UnivariateModel

__all__ = ["RunConfig", "build_parser", "main"]

EXIT_OK = 0
EXIT_INPUT = 1


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

_DEFAULT_OUTPUT_DIR_ENV = "MATENS_OUTPUT_DIR"

#: fallback values applied after CLI flags and the config file
_DEFAULTS: dict[str, object] = {
    "output_dir": None,  # resolved against the env var at run time
    "format": "both",
    "threads": 1,
    "n_rep": 200,
    "n": 100,
    "tol": 1e-6,
    "max_iter": 10000,
    "method": "newton",
    "family": None,
    "variant": None,
    "grid": "0,0.25,0.5,0.75,1",
    "families": None,
    "center": False,
    "uncentered": False,
    "coverage": 0.95,
    "fcr_q": 0.05,
    "significance": 0.01,
    "min_overlap": 10,
    "grid_points": 256,
    "target": None,
    "evaluate": False,
    "sizes": None,
    "q_ratios": None,
    "horizon": 30,
    "detrend": False,
    "model": None,
    "alpha": 0.95,
    "window": 150,
    "shape": None,
    "backtest_significance": 0.05,
    "resolution": 2001,
    "input": None,
    "model_file": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of one command run.

    The seed is always an explicit integer (auto-generated when the user
    gave none) and the whole object is echoed into the run manifest, so
    re-running the recorded configuration reproduces the run.
    """

    command: str
    seed: int
    output_dir: str
    fmt: str
    threads: int
    input: str | None = None
    model_file: str | None = None
    settings: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.seed, int):
            raise ShapeMismatch("the run seed must be an explicit integer")
        if self.fmt not in ("json", "csv", "both"):
            raise ShapeMismatch(f"unknown output format {self.fmt!r}")
        if self.threads < 1:
            raise ShapeMismatch("threads must be a positive integer")

    def to_json_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "format": self.fmt,
            "threads": self.threads,
            "input": self.input,
            "model_file": self.model_file,
            "settings": {k: self.settings[k] for k in sorted(self.settings)},
        }


class _Settings:
    """CLI > config file > defaults, with explicit-flag detection.

    Every argparse option uses ``default=None`` so an unset flag is
    distinguishable from an explicitly passed value; fallbacks come from the
    config file and then from ``_DEFAULTS``.
    """

    def __init__(self, ns: argparse.Namespace):
        self.ns = ns
        self.file_cfg: dict = {}
        if getattr(ns, "config", None):
            path = Path(ns.config)
            if not path.exists():
                raise FileNotFoundError(f"config file not found: {path}")
            try:
                obj = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise MatensError(f"config file is not valid JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise MatensError("config file must hold a JSON object")
            self.file_cfg = obj

    def get(self, key: str):
        cli = getattr(self.ns, key, None)
        if cli is not None:
            return cli
        if key in self.file_cfg:
            return self.file_cfg[key]
        return _DEFAULTS.get(key)

    def seed(self) -> int:
        value = self.get("seed")
        if value is None:
            # fresh OS entropy, truncated to a storable integer
            value = int(np.random.SeedSequence().entropy % (2 ** 32))
        return int(value)

    def output_dir(self) -> str:
        value = self.get("output_dir")
        if value is None:
            value = os.environ.get(_DEFAULT_OUTPUT_DIR_ENV, "matens-out")
        return str(value)

    def require(self, key: str, flag: str) -> str:
        value = self.get(key)
        if value is None:
            raise MatensError(f"{flag} is required (flag or config file)")
        return str(value)


# ---------------------------------------------------------------------------
# artifact writing
# ---------------------------------------------------------------------------

def _cell(x) -> str:
    """One deterministic CSV cell; blank for missing values."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "" if not np.isfinite(x) else repr(x)
    return str(x)


class _Sink:
    """Writes artifacts into the output directory and records their hashes."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.outdir = Path(config.output_dir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.records: list[dict] = []

    def _write(self, name: str, text: str) -> Path:
        path = self.outdir / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.records.append(
            {"path": name, "sha256": hashlib.sha256(data).hexdigest()}
        )
        return path

    def write_json(self, name: str, obj) -> Path | None:
        if self.config.fmt == "csv":
            return None
        return self._write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> Path | None:
        if self.config.fmt == "json":
            return None
        lines = [",".join(header)]
        lines.extend(",".join(_cell(c) for c in row) for row in rows)
        return self._write(name, "\n".join(lines) + "\n")

    def finish(self) -> Path:
        manifest = {
            "config": self.config.to_json_dict(),
            "outputs": self.records,
        }
        path = self.outdir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# shared input helpers
# ---------------------------------------------------------------------------

def _load_input(settings: _Settings) -> DataMatrix:
    path = Path(settings.require("input", "--input"))
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    return load_matrix(path)


def _load_model(settings: _Settings) -> UnivariateModel | EnsembleModel:
    path = Path(settings.require("model_file", "--model-file"))
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MatensError(f"model file is not valid JSON: {exc}") from None
    if "multipliers" in obj:
        return EnsembleModel.from_json_dict(obj)
    return UnivariateModel.from_json_dict(obj)


def _series_from(data: DataMatrix) -> np.ndarray:
    """A single fully observed series from a one-row or one-column matrix."""
    if data.has_missing:
        raise ShapeMismatch("the return series must be fully observed")
    if 1 not in data.shape:
        raise ShapeMismatch(
            f"a single series is required; got a {data.shape} matrix"
        )
    return data.values.ravel()


def _nan_values(data: DataMatrix) -> np.ndarray:
    return np.where(data.mask, data.values, np.nan)


def _calibration_options(settings: _Settings) -> CalibrationOptions:
    return CalibrationOptions(
        tol_rel=float(settings.get("tol")),
        max_iter=int(settings.get("max_iter")),
        method=str(settings.get("method")),
    )


def _result_report(result) -> dict:
    return {
        "converged": result.converged,
        "iterations": result.iterations,
        "max_rel_constraint_err": result.max_rel_constraint_err,
        "log_likelihood": result.log_likelihood,
        "method": result.method,
        "dropped_constraints": list(result.dropped_constraints),
        "message": result.message,
        "exit_code": result.exit_code,
    }


def _parse_levels(text: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise MatensError(f"cannot parse quantile levels from {text!r}") from None
    if not levels:
        raise MatensError("the quantile grid needs at least one level")
    return levels


def _parse_int_list(text, flag: str) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise MatensError(f"cannot parse integers for {flag} from {text!r}") from None


def _parse_float_list(text, flag: str) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise MatensError(f"cannot parse numbers for {flag} from {text!r}") from None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_calibrate(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    family = settings.get("family")
    variant = settings.get("variant")
    if (family is None) == (variant is None):
        raise MatensError(
            "choose exactly one ensemble: --family for a single series, "
            "--variant for a matrix"
        )
    data = _load_input(settings)
    opts = _calibration_options(settings)
    config = RunConfig(
        command="calibrate",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        settings={
            "family": family,
            "variant": variant,
            "grid": settings.get("grid"),
            "families": settings.get("families"),
            "center": bool(settings.get("center")),
            "uncentered": bool(settings.get("uncentered")),
            "tol": opts.tol_rel,
            "max_iter": opts.max_iter,
            "method": opts.method,
        },
    )
    sink = _Sink(config)

    if family is not None:
        xi = _parse_levels(settings.get("grid"))
        values = data.observed_values()
        model, result = fit_univariate(values, xi, str(family), opts)
        report = _result_report(result)
        report["targets"] = {
            "counts": model.targets.counts.tolist(),
            "sums": model.targets.sums.tolist(),
            "sq_sums": model.targets.sq_sums.tolist(),
            "n_total": model.targets.n_total,
        }
    else:
        if bool(settings.get("center")):
            data = center_rows(data)
        variant_key = str(variant).replace("-", "_")
        margins = compute_margins(
            data, expect_centered=not bool(settings.get("uncentered"))
        )
        fams = settings.get("families")
        if fams is None:
            fams = (
                ("alpha", "beta", "gamma", "sigma")
                if variant_key == "with_missing"
                else ("alpha", "gamma", "sigma")
            )
        else:
            fams = tuple(tok.strip() for tok in str(fams).split(",") if tok.strip())
        spec = ConstraintSpec(
            variant=variant_key,
            families=fams,
            n_rows=data.n_rows,
            n_cols=data.n_cols,
        )
        model, result = calibrate(spec, margins, opts)
        report = _result_report(result)
        expected = model.expected_margins()
        report["observed_margins"] = margins.to_json_dict()
        report["expected_margins"] = expected.to_json_dict()

    sink.write_json("model.json", model.to_json_dict())
    sink.write_json("calibration.json", report)
    sink.finish()
    print(
        f"calibrate: converged={result.converged} "
        f"max_rel_err={result.max_rel_constraint_err:.3e}"
    )
    return result.exit_code


def cmd_sample(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    model = _load_model(settings)
    n = int(settings.get("n"))
    if n < 1:
        raise MatensError("--n must be a positive draw count")
    config = RunConfig(
        command="sample",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        model_file=str(settings.get("model_file")),
        settings={"n": n},
    )
    sink = _Sink(config)

    if isinstance(model, UnivariateModel):
        draws = model.sample(n, seed=config.seed)
        sink.write_csv(
            "samples.csv", ["draw", "value"], ((k, v) for k, v in enumerate(draws))
        )
        sink.write_json("samples.json", {"values": [float(v) for v in draws]})
    else:
        children = np.random.SeedSequence(config.seed).spawn(n)
        rows = []
        reps = []
        for k, child in enumerate(children):
            draw = model.sample(seed=child)
            vals = np.where(draw.mask, draw.values, np.nan)
            reps.append(
                [[None if not np.isfinite(v) else float(v) for v in row]
                 for row in vals]
            )
            for i in range(draw.n_rows):
                for t in range(draw.n_cols):
                    rows.append((k, i, t, vals[i, t]))
        sink.write_csv("samples.csv", ["replicate", "row", "col", "value"], rows)
        sink.write_json("samples.json", {"replicates": reps})
    sink.finish()
    print(f"sample: wrote {n} draws with seed {config.seed}")
    return EXIT_OK


def cmd_validate(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    data = _load_input(settings)
    model = _load_model(settings)
    if not isinstance(model, EnsembleModel):
        raise MatensError("validation needs a matrix ensemble model")
    n_rep = int(settings.get("n_rep"))
    significance = float(settings.get("significance"))
    config = RunConfig(
        command="validate",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        model_file=str(settings.get("model_file")),
        settings={"n_rep": n_rep, "significance": significance},
    )
    sink = _Sink(config)

    values = _nan_values(data)
    report: dict = {"moments": {}, "ks": {}}
    for moment in ("mean", "variance"):
        dist = moment_distribution(
            model,
            moment=moment,
            axis="row",
            n_rep=n_rep,
            seed=config.seed,
            threads=config.threads,
        )
        with np.errstate(invalid="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if moment == "mean":
                observed = np.nanmean(values, axis=1)
            else:
                enough = data.mask.sum(axis=1) >= 2
                observed = np.nanvar(values, axis=1, ddof=1)
                observed = np.where(enough, observed, np.nan)
        fraction = dist.coverage_fraction(observed)
        entry = dist.to_json_dict()
        entry["observed"] = [
            None if not np.isfinite(v) else float(v) for v in observed
        ]
        entry["fraction_inside_90pct_band"] = fraction
        report["moments"][moment] = entry
        lo, hi = dist.band()
        sink.write_csv(
            f"validate_{moment}.csv",
            ["target", "observed", "band_lo", "band_hi", "analytic"],
            (
                (
                    dist.target_ids[g],
                    observed[g],
                    lo[g],
                    hi[g],
                    None if dist.analytic is None else dist.analytic[g],
                )
                for g in range(len(dist.target_ids))
            ),
        )

    ks = ks_compare(
        data,
        model,
        axis="global",
        n_rep=n_rep,
        significance=significance,
        seed=config.seed,
        threads=config.threads,
    )
    report["ks"]["global"] = {
        "statistic": ks.statistic,
        "p_value": ks.p_value,
        "reject": ks.reject,
        "significance": ks.significance,
        "n_empirical": ks.n_empirical,
        "n_reference": ks.n_reference,
        "method": ks.method,
    }
    sink.write_json("validation.json", report)
    sink.finish()
    mean_frac = report["moments"]["mean"]["fraction_inside_90pct_band"]
    var_frac = report["moments"]["variance"]["fraction_inside_90pct_band"]
    print(
        f"validate: mean-band coverage {mean_frac:.2f}, "
        f"variance-band coverage {var_frac:.2f}, "
        f"KS p={ks.p_value:.4f} reject={ks.reject}"
    )
    return EXIT_OK


def cmd_anomaly(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    data = _load_input(settings)
    model = _load_model(settings)
    if not isinstance(model, EnsembleModel):
        raise MatensError("the anomaly scan needs a matrix ensemble model")
    coverage = float(settings.get("coverage"))
    fcr_q = float(settings.get("fcr_q"))
    config = RunConfig(
        command="anomaly",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        model_file=str(settings.get("model_file")),
        settings={"coverage": coverage, "fcr_q": fcr_q},
    )
    sink = _Sink(config)
    report = anomaly_scan(data, model, coverage=coverage, fcr_q=fcr_q)
    sink.write_json("anomaly.json", report.to_json_dict())
    sink.write_csv(
        "anomaly.csv",
        ["row", "col", "value", "lower", "upper"],
        ((iv.row, iv.col, iv.value, iv.lower, iv.upper) for iv in report.intervals),
    )
    sink.finish()
    print(
        f"anomaly: flagged {report.n_flagged} of {report.n_selected} selected "
        f"cells ({report.n_observed} observed)"
    )
    return EXIT_OK


def cmd_spectrum(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    data = _load_input(settings)
    n_rep = int(settings.get("n_rep"))
    min_overlap = int(settings.get("min_overlap"))
    grid_points = int(settings.get("grid_points"))
    has_model = settings.get("model_file") is not None
    config = RunConfig(
        command="spectrum",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        model_file=settings.get("model_file"),
        settings={
            "n_rep": n_rep,
            "min_overlap": min_overlap,
            "grid_points": grid_points,
        },
    )
    sink = _Sink(config)

    corr, kept = correlation_matrix(data, min_overlap=min_overlap)
    empirical = np.linalg.eigvalsh(corr)[::-1]
    q = kept.size / data.n_cols
    summary: dict = {
        "n_rows_used": int(kept.size),
        "n_cols": data.n_cols,
        "q": q,
        "empirical_lambda_max": float(empirical[0]),
    }

    hi = float(empirical.max())
    ensemble = None
    if has_model:
        model = _load_model(settings)
        if not isinstance(model, EnsembleModel):
            raise MatensError("the spectrum pipeline needs a matrix ensemble model")
        ensemble = ensemble_spectrum(
            model,
            n_rep=n_rep,
            seed=config.seed,
            threads=config.threads,
            min_overlap=min_overlap,
        )
        hi = max(hi, float(np.max(ensemble.lambda_max)))
        summary["ensemble"] = ensemble.to_json_dict()
        sink.write_csv(
            "lambda_max.csv",
            ["replicate", "lambda_max"],
            ((k, v) for k, v in enumerate(ensemble.lambda_max)),
        )
    mp_ok = 0.0 < q < 1.0
    if mp_ok:
        lo_edge, hi_edge = mp_edges(q)
        hi = max(hi, hi_edge)
        summary["mp_edges"] = [lo_edge, hi_edge]
    grid = np.linspace(0.0, hi * 1.05, grid_points)

    emp_density = gaussian_kde(empirical, bw_method="silverman")(grid)
    ens_density = ensemble.mean_density(grid)[1] if ensemble is not None else None
    noise = mp_density(grid, q) if mp_ok else None
    sink.write_csv(
        "spectrum.csv",
        ["lambda", "empirical", "ensemble", "marchenko_pastur"],
        (
            (
                grid[k],
                emp_density[k],
                None if ens_density is None else ens_density[k],
                None if noise is None else noise[k],
            )
            for k in range(grid.size)
        ),
    )
    sink.write_csv(
        "eigenvalues.csv",
        ["rank", "eigenvalue"],
        ((k, v) for k, v in enumerate(empirical)),
    )
    sink.write_json("spectrum.json", summary)
    sink.finish()
    print(
        f"spectrum: {kept.size} rows, lambda_max={empirical[0]:.4f}"
        + (f", MP edge {summary['mp_edges'][1]:.4f}" if mp_ok else "")
    )
    return EXIT_OK


def cmd_portfolio(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    data = _load_input(settings)
    config = RunConfig(
        command="portfolio",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        settings={
            "evaluate": bool(settings.get("evaluate")),
            "sizes": settings.get("sizes"),
            "q_ratios": settings.get("q_ratios"),
            "horizon": int(settings.get("horizon")),
            "detrend": bool(settings.get("detrend")),
            "target": settings.get("target"),
        },
    )
    sink = _Sink(config)

    if bool(settings.get("evaluate")):
        sizes = settings.get("sizes")
        qs = settings.get("q_ratios")
        if sizes is None or qs is None:
            raise MatensError("--evaluate needs both --sizes and --q-ratios")
        tables = out_of_sample_eval(
            data,
            _parse_int_list(sizes, "--sizes"),
            _parse_float_list(qs, "--q-ratios"),
            horizon=int(settings.get("horizon")),
            detrend=bool(settings.get("detrend")),
            seed=config.seed,
        )
        sink.write_json("portfolio_eval.json", tables.to_json_dict())
        header = [
            "portfolio_size", "q", "in_sample_days", "n_windows",
            "n_degenerate", "mean", "band_lo", "band_hi",
        ]
        for name, table in (
            ("risk_table.csv", tables.risk_table),
            ("sharpe_table.csv", tables.sharpe_table),
        ):
            sink.write_csv(name, header, ((row[k] for k in header) for row in table))
        sink.finish()
        print(
            f"portfolio: evaluated {len(tables.risk_table)} (size, q) pairs, "
            f"detrended={tables.detrended}"
        )
        return EXIT_OK

    target = settings.get("target")
    solution = markowitz_weights(
        data, target_return=None if target is None else float(target)
    )
    ids = data.row_ids if data.row_ids else tuple(
        str(i) for i in range(data.n_rows)
    )
    sink.write_json(
        "portfolio.json",
        {
            "weights": {ids[i]: float(w) for i, w in enumerate(solution.weights)},
            "target_return": solution.target_return,
            "in_sample_variance": solution.in_sample_variance,
            "window": list(solution.window),
        },
    )
    sink.write_csv(
        "weights.csv",
        ["asset", "weight"],
        ((ids[i], w) for i, w in enumerate(solution.weights)),
    )
    sink.finish()
    print(
        f"portfolio: {data.n_rows} assets, in-sample variance "
        f"{solution.in_sample_variance:.6g}"
    )
    return EXIT_OK


def cmd_var(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    data = _load_input(settings)
    series = _series_from(data)
    kind = str(settings.get("model") or "M1")
    window = int(settings.get("window"))
    alpha = float(settings.get("alpha"))
    shape = settings.get("shape")
    if shape is None:
        l1 = max(2, int(round(window / 6)))
        shape_t = (l1, window + 1 - l1)
    else:
        parts = str(shape).lower().split("x")
        if len(parts) != 2:
            raise MatensError("--shape must look like 25x126")
        shape_t = (int(parts[0]), int(parts[1]))
    spec = VarModelSpec(kind=kind, window=window, shape=shape_t, var_level=alpha)
    significance = float(settings.get("backtest_significance"))
    config = RunConfig(
        command="var",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        input=str(settings.get("input")),
        settings={
            "model": kind,
            "alpha": alpha,
            "window": window,
            "shape": list(shape_t),
            "backtest_significance": significance,
        },
    )
    sink = _Sink(config)

    rolled = rolling_var(series, spec)
    report = backtest_suite(rolled.exceptions, alpha, significance=significance)
    sink.write_csv(
        "var.csv",
        ["day", "return", "var", "exception"],
        (
            (
                rolled.start + k,
                series[rolled.start + k],
                rolled.var[k],
                bool(rolled.exceptions[k]),
            )
            for k in range(rolled.var.size)
        ),
    )
    sink.write_json(
        "var.json",
        {
            "spec": spec.to_json_dict(),
            "start": rolled.start,
            "n_estimates": int(rolled.var.size),
            "n_exceptions": rolled.n_exceptions,
            "backtests": report.to_json_dict(),
        },
    )
    sink.finish()
    print(
        f"var: {kind} at level {alpha}, {rolled.n_exceptions} exceptions over "
        f"{rolled.var.size} days, {report.n_passed}/{len(report.tests)} "
        "backtests passed"
    )
    return EXIT_OK


def cmd_oracle(ns: argparse.Namespace) -> int:
    settings = _Settings(ns)
    model = _load_model(settings)
    resolution = int(settings.get("resolution"))
    config = RunConfig(
        command="oracle",
        seed=settings.seed(),
        output_dir=settings.output_dir(),
        fmt=str(settings.get("format")),
        threads=int(settings.get("threads")),
        model_file=str(settings.get("model_file")),
        settings={"resolution": resolution},
    )
    sink = _Sink(config)
    closed = float(model.log_partition())
    brute = brute_force_log_partition(model, resolution=resolution)
    rel_err = abs(brute - closed) / max(1.0, abs(closed))
    sink.write_json(
        "oracle.json",
        {
            "closed_form": closed,
            "brute_force": brute,
            "rel_err": rel_err,
            "resolution": resolution,
        },
    )
    sink.finish()
    print(f"oracle: closed={closed!r} brute={brute!r} rel_err={rel_err:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file (keys = flag names)")
    sub.add_argument("--seed", type=int, help="random seed (auto-generated if absent)")
    sub.add_argument(
        "--output-dir",
        dest="output_dir",
        help=f"artifact directory (default: ${_DEFAULT_OUTPUT_DIR_ENV} or matens-out)",
    )
    sub.add_argument(
        "--format", choices=("json", "csv", "both"), help="artifact formats to write"
    )
    sub.add_argument("--threads", type=int, help="cap on internal worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matens",
        description="Calibrate maximum-entropy ensembles of time-series "
        "matrices and run their validation, anomaly, spectrum, portfolio, "
        "and value-at-risk pipelines.",
        epilog="Exit codes: 0 success, 1 input/usage error, "
        "2 calibration unconverged, 3 infeasible constraints.",
    )
    commands = parser.add_subparsers(dest="command", metavar="command")

    p = commands.add_parser(
        "calibrate", help="fit an ensemble to a data matrix or value series"
    )
    p.add_argument("--input", help="CSV/JSON data matrix")
    p.add_argument(
        "--family", choices=("H1", "H2", "SUMVAR"), help="univariate constraint family"
    )
    p.add_argument("--grid", help="comma-separated quantile levels for the bin grid")
    p.add_argument(
        "--variant",
        choices=("with-missing", "no-missing"),
        help="matrix ensemble variant",
    )
    p.add_argument(
        "--families", help="comma-separated multiplier families (matrix only)"
    )
    p.add_argument(
        "--center", action="store_const", const=True,
        help="subtract row means before computing margins",
    )
    p.add_argument(
        "--uncentered", action="store_const", const=True,
        help="suppress the centering expectation on the input",
    )
    p.add_argument("--tol", type=float, help="relative constraint tolerance")
    p.add_argument("--max-iter", dest="max_iter", type=int, help="iteration budget")
    p.add_argument(
        "--method", choices=("newton", "gradient", "fixed_point"), help="solver"
    )
    _common_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = commands.add_parser("sample", help="draw replicates from a saved model")
    p.add_argument("--model-file", dest="model_file", help="saved model JSON")
    p.add_argument("--n", type=int, help="number of draws")
    _common_flags(p)
    p.set_defaults(func=cmd_sample)

    p = commands.add_parser(
        "validate", help="moment-band and KS self-consistency checks"
    )
    p.add_argument("--input", help="CSV/JSON data matrix")
    p.add_argument("--model-file", dest="model_file", help="saved model JSON")
    p.add_argument("--n-rep", dest="n_rep", type=int, help="replicate count")
    p.add_argument("--significance", type=float, help="KS rejection level")
    _common_flags(p)
    p.set_defaults(func=cmd_validate)

    p = commands.add_parser(
        "anomaly", help="false-coverage-controlled scan for anomalous cells"
    )
    p.add_argument("--input", help="CSV/JSON data matrix")
    p.add_argument("--model-file", dest="model_file", help="saved model JSON")
    p.add_argument("--coverage", type=float, help="per-cell coverage level")
    p.add_argument("--fcr-q", dest="fcr_q", type=float, help="false coverage rate")
    _common_flags(p)
    p.set_defaults(func=cmd_anomaly)

    p = commands.add_parser(
        "spectrum", help="correlation spectra: data vs ensemble vs pure noise"
    )
    p.add_argument("--input", help="CSV/JSON data matrix")
    p.add_argument(
        "--model-file", dest="model_file",
        help="saved matrix model JSON (optional; adds the ensemble overlay)",
    )
    p.add_argument("--n-rep", dest="n_rep", type=int, help="replicate count")
    p.add_argument(
        "--min-overlap", dest="min_overlap", type=int,
        help="minimum pairwise overlap before a row is dropped",
    )
    p.add_argument(
        "--grid-points", dest="grid_points", type=int, help="density grid size"
    )
    _common_flags(p)
    p.set_defaults(func=cmd_spectrum)

    p = commands.add_parser(
        "portfolio", help="minimum-risk weights or rolling out-of-sample tables"
    )
    p.add_argument("--input", help="CSV/JSON asset-by-day return matrix")
    p.add_argument("--target", type=float, help="required portfolio return")
    p.add_argument(
        "--evaluate", action="store_const", const=True,
        help="run the rolling in/out-of-sample evaluation",
    )
    p.add_argument("--sizes", help="comma-separated portfolio sizes")
    p.add_argument("--q-ratios", dest="q_ratios", help="comma-separated aspect ratios")
    p.add_argument("--horizon", type=int, help="out-of-sample days per window")
    p.add_argument(
        "--detrend", action="store_const", const=True,
        help="subtract calibrated ensemble means in-sample",
    )
    _common_flags(p)
    p.set_defaults(func=cmd_portfolio)

    p = commands.add_parser(
        "var", help="rolling value-at-risk with the exception backtest suite"
    )
    p.add_argument("--input", help="CSV/JSON single return series")
    p.add_argument("--model", choices=("M1", "M2", "M3"), help="estimator kind")
    p.add_argument("--alpha", type=float, help="VaR level, e.g. 0.95")
    p.add_argument("--window", type=int, help="rolling window length")
    p.add_argument("--shape", help="embedding shape like 25x126 (M2/M3)")
    p.add_argument(
        "--backtest-significance", dest="backtest_significance", type=float,
        help="significance level of the backtests",
    )
    _common_flags(p)
    p.set_defaults(func=cmd_var)

    p = commands.add_parser(
        "oracle", help="recompute a model's log normalizer without closed forms"
    )
    p.add_argument("--model-file", dest="model_file", help="saved model JSON")
    p.add_argument("--resolution", type=int, help="quadrature grid resolution")
    _common_flags(p)
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; fold the
        # latter into the input-error code so 2 keeps meaning "unconverged"
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    if getattr(ns, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_INPUT
    try:
        return ns.func(ns)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleConstraints as exc:
        print(f"error: infeasible constraints: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Unconverged as exc:
        print(f"error: calibration did not converge: {exc}", file=sys.stderr)
        return EXIT_UNCONVERGED
    except MatensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
