"""Single-series maximum-entropy ensembles on a bin grid.

A model in this module describes T independent, identically distributed
draws whose common density has the piecewise exponential-family form

    p(x) = exp(-(a_i + b_i x + c_i x^2)) / S   for x in bin i,

where the bins come from a :class:`~matens.core.QuantileGrid` and ``S`` is
the per-draw normalizer.  Three constraint families are shipped:

* ``H1``     -- per-bin occupancy counts and per-bin value sums
                (``2 (d-1)`` multipliers on a d-edge grid);
* ``H2``     -- per-bin occupancy counts, one shared linear multiplier and
                one shared quadratic multiplier (``(d-1) + 2``);
* ``SUMVAR`` -- per-bin value sums on all but the top bin plus one shared
                quadratic multiplier (no occupancy constraints).

Additional families amount to new :class:`FamilyLayout` rows; everything
downstream is written against the layout, not the family name.

The first per-bin count multiplier is pinned to zero: adding a common
constant to all count multipliers rescales numerator and normalizer alike,
so only differences are identifiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.special import log_ndtr, ndtri_exp

from .core import QuantileGrid
from .errors import (
    DegenerateQuantiles,
    DivergentPartition,
    EmptyInput,
    InvalidGrid,
    NotCalibrated,
    OutOfSupport,
    ShapeMismatch,
)

__all__ = [
    "FamilyLayout",
    "FAMILIES",
    "UnivariateSpec",
    "BinStatistics",
    "ParamIndex",
    "UnivariateModel",
    "bin_statistics",
    "param_index",
    "log_partition",
    "kl_divergence",
    "information_criterion",
]

# series cutover for (1 - e^-u)/u style expressions
_SMALL_EXPONENT = 1e-4
_TINY_EXPONENT = 1e-10


@dataclass(frozen=True)
class FamilyLayout:
    """Which multipliers a univariate constraint family declares.

    ``linear`` is one of ``"per_bin"``, ``"per_bin_drop_last"``, ``"shared"``
    or ``"none"``; ``quadratic`` is ``"shared"`` or ``"none"``.
    """

    name: str
    has_counts: bool
    linear: str
    quadratic: str

    def declared_param_count(self, n_bins: int) -> int:
        k = n_bins if self.has_counts else 0
        k += {
            "per_bin": n_bins,
            "per_bin_drop_last": n_bins - 1,
            "shared": 1,
            "none": 0,
        }[self.linear]
        if self.quadratic == "shared":
            k += 1
        return k


FAMILIES: dict[str, FamilyLayout] = {
    "H1": FamilyLayout("H1", has_counts=True, linear="per_bin", quadratic="none"),
    "H2": FamilyLayout("H2", has_counts=True, linear="shared", quadratic="shared"),
    "SUMVAR": FamilyLayout(
        "SUMVAR", has_counts=False, linear="per_bin_drop_last", quadratic="shared"
    ),
}


@dataclass(frozen=True)
class UnivariateSpec:
    """Grid + constraint family + number of draws the ensemble describes."""

    grid: QuantileGrid
    family: str
    n_samples: int

    def __post_init__(self) -> None:
        fam = str(self.family).upper()
        if fam not in FAMILIES:
            raise InvalidGrid(f"unknown family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if self.n_samples < 1:
            raise EmptyInput("spec needs n_samples >= 1")
        layout = FAMILIES[fam]
        q = self.grid.edges()
        widths = np.diff(q[np.isfinite(q)])
        if widths.size and np.any(widths <= 0):
            raise DegenerateQuantiles("grid has zero-width bins")
        if layout.quadratic == "none":
            # integrability must come from the bin's own linear multiplier
            if self.grid.lower_unbounded and self.grid.upper_unbounded:
                if self.grid.n_bins == 1:
                    raise InvalidGrid(
                        f"{fam} cannot normalize a doubly-unbounded single bin"
                    )
            if layout.linear in ("none",):
                if not self.grid.is_bounded:
                    raise InvalidGrid(f"{fam} needs a bounded grid")
            if layout.linear == "per_bin_drop_last" and self.grid.upper_unbounded:
                raise InvalidGrid(
                    f"{fam} leaves the top bin without a multiplier; "
                    "an unbounded top bin cannot be normalized"
                )

    @property
    def layout(self) -> FamilyLayout:
        return FAMILIES[self.family]

    @property
    def n_bins(self) -> int:
        return self.grid.n_bins

    def declared_param_count(self) -> int:
        return self.layout.declared_param_count(self.n_bins)

    def to_json_dict(self) -> dict:
        return {
            "grid": self.grid.to_json_dict(),
            "family": self.family,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "UnivariateSpec":
        return cls(
            grid=QuantileGrid.from_json_dict(obj["grid"]),
            family=obj["family"],
            n_samples=int(obj["n_samples"]),
        )


@dataclass(frozen=True)
class BinStatistics:
    """Per-bin occupancy counts, value sums, squared-value sums."""

    counts: np.ndarray
    sums: np.ndarray
    sq_sums: np.ndarray
    n_total: int

    def __post_init__(self) -> None:
        for name in ("counts", "sums", "sq_sums"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.counts.shape == self.sums.shape == self.sq_sums.shape):
            raise ShapeMismatch("bin statistic arrays must align")
        if int(round(self.counts.sum())) != self.n_total:
            raise ShapeMismatch("bin counts must sum to the total sample size")


def bin_statistics(
    values: Sequence[float] | np.ndarray, grid: QuantileGrid
) -> BinStatistics:
    """Counts, sums and squared sums over half-open bins ``[q_i, q_{i+1})``.

    A finite top edge is inclusive.  Values outside a bounded grid raise
    :class:`OutOfSupport`.
    """
    x = np.asarray(values, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise EmptyInput("no finite values to bin")
    idx = grid.bin_index(x)
    bad = idx < 0
    if np.any(bad):
        raise OutOfSupport(
            f"{int(bad.sum())} value(s) outside the bounded grid support; "
            f"first offender {x[bad][0]!r}"
        )
    d = grid.n_bins
    counts = np.bincount(idx, minlength=d).astype(float)
    sums = np.bincount(idx, weights=x, minlength=d)
    sq_sums = np.bincount(idx, weights=x * x, minlength=d)
    return BinStatistics(counts=counts, sums=sums, sq_sums=sq_sums, n_total=x.size)


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamIndex:
    """Free-parameter layout for a spec with some bins clamped to zero mass.

    Order of the free vector: count multipliers (gauge bin excluded), then
    linear multipliers, then the shared quadratic multiplier if declared.
    """

    spec: UnivariateSpec
    clamped: tuple[int, ...]
    count_bins: tuple[int, ...]
    linear_bins: tuple[int, ...]
    shared_linear: bool
    has_quad: bool
    gauge_bin: int | None

    @property
    def n_free(self) -> int:
        return (
            len(self.count_bins)
            + len(self.linear_bins)
            + (1 if self.shared_linear else 0)
            + (1 if self.has_quad else 0)
        )

    def labels(self) -> list[str]:
        out = [f"count[{i}]" for i in self.count_bins]
        if self.shared_linear:
            out.append("linear")
        else:
            out.extend(f"linear[{i}]" for i in self.linear_bins)
        if self.has_quad:
            out.append("quad")
        return out

    def active_bins(self) -> np.ndarray:
        mask = np.ones(self.spec.n_bins, dtype=bool)
        mask[list(self.clamped)] = False
        return mask

    def expand(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Free vector -> per-bin coefficient arrays ``(a, b, c)``.

        Clamped bins keep zero coefficients; callers must combine with
        :meth:`active_bins`.
        """
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_free,):
            raise ShapeMismatch(
                f"expected {self.n_free} free parameters, got shape {params.shape}"
            )
        d = self.spec.n_bins
        a = np.zeros(d)
        b = np.zeros(d)
        c = np.zeros(d)
        pos = 0
        for i in self.count_bins:
            a[i] = params[pos]
            pos += 1
        if self.shared_linear:
            b[:] = params[pos]
            pos += 1
        else:
            for i in self.linear_bins:
                b[i] = params[pos]
                pos += 1
        if self.has_quad:
            c[:] = params[pos]
            pos += 1
        return a, b, c


def param_index(
    spec: UnivariateSpec, clamped_bins: Iterable[int] = ()
) -> ParamIndex:
    clamped = tuple(sorted(set(int(i) for i in clamped_bins)))
    for i in clamped:
        if not 0 <= i < spec.n_bins:
            raise ShapeMismatch(f"clamped bin {i} out of range")
    active = [i for i in range(spec.n_bins) if i not in clamped]
    if not active:
        raise DegenerateQuantiles("all bins clamped: the model has no support")
    layout = spec.layout
    gauge_bin: int | None = None
    count_bins: tuple[int, ...] = ()
    if layout.has_counts:
        gauge_bin = active[0]
        count_bins = tuple(i for i in active[1:])
    shared_linear = layout.linear == "shared"
    if layout.linear == "per_bin":
        linear_bins = tuple(active)
    elif layout.linear == "per_bin_drop_last":
        last = spec.n_bins - 1
        linear_bins = tuple(i for i in active if i != last)
    else:
        linear_bins = ()
    has_quad = layout.quadratic == "shared"
    return ParamIndex(
        spec=spec,
        clamped=clamped,
        count_bins=count_bins,
        linear_bins=linear_bins,
        shared_linear=shared_linear,
        has_quad=has_quad,
        gauge_bin=gauge_bin,
    )


def check_feasible(index: ParamIndex, params: np.ndarray) -> str | None:
    """Return a reason string when params leave the integrable region."""
    a, b, c = index.expand(params)
    if index.has_quad:
        if not c[0] > 0.0:
            return "shared quadratic multiplier must be strictly positive"
        return None
    q = index.spec.grid.edges()
    for i in np.nonzero(index.active_bins())[0]:
        lo, hi = q[i], q[i + 1]
        if math.isinf(lo) and math.isinf(hi):
            return f"bin {i} is doubly unbounded"
        if math.isinf(lo) and not b[i] < 0.0:
            return f"bin {i} is lower-unbounded and needs a negative linear multiplier"
        if math.isinf(hi) and not b[i] > 0.0:
            return f"bin {i} is upper-unbounded and needs a positive linear multiplier"
    return None


# ---------------------------------------------------------------------------
# stable bin integrals and conditional moments
# ---------------------------------------------------------------------------

def _log_phi_diff(alpha: float, beta: float) -> float:
    """log(Phi(beta) - Phi(alpha)) for alpha < beta, safe in far tails."""
    if alpha > 0.0:
        return _log_phi_diff(-beta, -alpha)
    la = log_ndtr(alpha)
    lb = log_ndtr(beta)
    if la == lb:
        return -math.inf
    return lb + math.log1p(-math.exp(la - lb))


def _std_normal_trunc_moments(alpha: float, beta: float, order: int) -> list[float]:
    """E[xi^k], k=1..order, xi standard normal truncated to [alpha, beta]."""
    if alpha > 0.0:
        mirrored = _std_normal_trunc_moments(-beta, -alpha, order)
        return [((-1.0) ** k) * mirrored[k - 1] for k in range(1, order + 1)]
    ln_diff = _log_phi_diff(alpha, beta)

    def hazard(z: float) -> float:
        if math.isinf(z):
            return 0.0
        return math.exp(-0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - ln_diff)

    ra, rb = hazard(alpha), hazard(beta)

    def endpoint(z: float, power: int, r: float) -> float:
        if r == 0.0:
            return 0.0
        return (z ** power) * r

    # recursion E[xi^k] = (k-1) E[xi^{k-2}] + alpha^{k-1} r_a - beta^{k-1} r_b
    e = [1.0]
    for k in range(1, order + 1):
        prev = e[k - 2] if k >= 2 else 0.0
        e.append((k - 1) * prev + endpoint(alpha, k - 1, ra) - endpoint(beta, k - 1, rb))
    return e[1:]


def _gauss_bin(lo: float, hi: float, b: float, c: float, order: int):
    """(log integral, conditional raw moments) of exp(-b x - c x^2) on [lo, hi]."""
    mu = -b / (2.0 * c)
    s = 1.0 / math.sqrt(2.0 * c)
    alpha = -math.inf if math.isinf(lo) else (lo - mu) / s
    beta = math.inf if math.isinf(hi) else (hi - mu) / s
    ln_diff = _log_phi_diff(alpha, beta)
    ln_j = b * b / (4.0 * c) + math.log(s) + 0.5 * math.log(2.0 * math.pi) + ln_diff
    if not order:
        return ln_j, []
    xi = _std_normal_trunc_moments(alpha, beta, order)
    e = [1.0] + xi  # e[k] = E[xi^k]
    raw = []
    for k in range(1, order + 1):
        total = 0.0
        for j in range(k + 1):
            total += math.comb(k, j) * (mu ** (k - j)) * (s ** j) * e[j]
        raw.append(total)
    return ln_j, raw


def _exp_shifted_moments(rate: float, length: float, order: int) -> list[float]:
    """E[y^k], k=1..order, for density ∝ exp(-rate*y) on [0, length]."""
    if math.isinf(length):
        return [math.factorial(k) / rate ** k for k in range(1, order + 1)]
    u = rate * length
    if u < _TINY_EXPONENT:
        return [length ** k / (k + 1) for k in range(1, order + 1)]
    i_prev = -math.expm1(-u)
    i0 = i_prev
    out = []
    decay = math.exp(-u)
    for k in range(1, order + 1):
        i_k = -(length ** k) * decay + (k / rate) * i_prev
        out.append(i_k / i0)
        i_prev = i_k
    return out


def _exp_bin(lo: float, hi: float, b: float, order: int):
    """(log integral, conditional raw moments) of exp(-b x) on [lo, hi]."""
    if math.isinf(lo) and math.isinf(hi):
        return math.inf, [math.nan] * order
    if b == 0.0:
        if math.isinf(lo) or math.isinf(hi):
            return math.inf, [math.nan] * order
        length = hi - lo
        ln_j = math.log(length)
        raw = [
            (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * length)
            for k in range(1, order + 1)
        ]
        return ln_j, raw
    if b > 0.0:
        if math.isinf(lo):
            return math.inf, [math.nan] * order
        anchor, direction = lo, 1.0
    else:
        if math.isinf(hi):
            return math.inf, [math.nan] * order
        anchor, direction = hi, -1.0
    rate = abs(b)
    length = hi - lo  # may be inf on the open side
    if math.isinf(length):
        ln_j = -b * anchor - math.log(rate)
    else:
        u = rate * length
        if u < _SMALL_EXPONENT:
            # (1 - e^-u)/u expanded to keep full precision near the
            # zero-multiplier limit
            poly = -u / 2.0 + u * u / 6.0 - u ** 3 / 24.0
            ln_j = -b * anchor + math.log(length) + math.log1p(poly)
        else:
            ln_j = -b * anchor + math.log(-math.expm1(-u)) - math.log(rate)
    if not order:
        return ln_j, []
    ey = [1.0] + _exp_shifted_moments(rate, length, order)
    raw = []
    for k in range(1, order + 1):
        total = 0.0
        for j in range(k + 1):
            total += (
                math.comb(k, j)
                * (anchor ** (k - j))
                * (direction ** j)
                * ey[j]
            )
        raw.append(total)
    return ln_j, raw


def bin_log_norms(
    index: ParamIndex, params: np.ndarray, order: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-bin ``log z_i`` and conditional raw moments up to ``order``.

    ``z_i = exp(-a_i) * ∫_bin exp(-b_i x - c_i x^2) dx``; clamped bins get
    ``-inf``.  Raises :class:`DivergentPartition` outside the feasible
    region.
    """
    reason = check_feasible(index, params)
    if reason is not None:
        raise DivergentPartition(reason)
    a, b, c = index.expand(params)
    q = index.spec.grid.edges()
    d = index.spec.n_bins
    active = index.active_bins()
    ln_z = np.full(d, -np.inf)
    moments = np.zeros((max(order, 1), d)) if order else np.zeros((0, d))
    for i in range(d):
        if not active[i]:
            continue
        lo, hi = q[i], q[i + 1]
        if c[i] > 0.0:
            ln_j, raw = _gauss_bin(lo, hi, b[i], c[i], order)
        else:
            ln_j, raw = _exp_bin(lo, hi, b[i], order)
        if math.isinf(ln_j) and ln_j > 0:
            raise DivergentPartition(f"bin {i} integral diverges")
        ln_z[i] = -a[i] + ln_j
        for k in range(order):
            moments[k, i] = raw[k]
    return ln_z, moments


def _logsumexp(v: np.ndarray) -> float:
    m = np.max(v)
    if math.isinf(m) and m < 0:
        return -math.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnivariateModel:
    """A parametrized (usually calibrated) univariate ensemble.

    ``params`` is the free multiplier vector in the order given by
    :meth:`ParamIndex.labels`.  ``log_likelihood`` is filled by calibration;
    information criteria require it.
    """

    spec: UnivariateSpec
    params: np.ndarray
    clamped_bins: tuple[int, ...] = ()
    log_likelihood: float | None = None
    targets: BinStatistics | None = None

    def __post_init__(self) -> None:
        p = np.array(self.params, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(
            self, "clamped_bins", tuple(int(i) for i in self.clamped_bins)
        )
        idx = param_index(self.spec, self.clamped_bins)
        if p.shape != (idx.n_free,):
            raise ShapeMismatch(
                f"params shape {p.shape} != free count {idx.n_free}"
            )

    @property
    def index(self) -> ParamIndex:
        return param_index(self.spec, self.clamped_bins)

    # -- distribution ----------------------------------------------------
    def _log_masses(self) -> tuple[np.ndarray, float]:
        ln_z, _ = bin_log_norms(self.index, self.params, order=0)
        ln_s = _logsumexp(ln_z)
        if math.isinf(ln_s):
            raise DivergentPartition("all bins carry zero mass")
        return ln_z, ln_s

    def bin_masses(self) -> np.ndarray:
        ln_z, ln_s = self._log_masses()
        return np.exp(ln_z - ln_s)

    def log_partition(self) -> float:
        """T times the log of the per-draw normalizer."""
        _, ln_s = self._log_masses()
        return self.spec.n_samples * ln_s

    def density(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx_map = self.spec.grid.bin_index(x)
        a, b, c = self.index.expand(self.params)
        _, ln_s = self._log_masses()
        active = self.index.active_bins()
        out = np.zeros_like(x)
        inside = idx_map >= 0
        ii = idx_map[inside]
        ok = active[ii]
        expo = -(a[ii] + b[ii] * x[inside] + c[ii] * x[inside] ** 2) - ln_s
        vals = np.where(ok, np.exp(expo), 0.0)
        out[inside] = vals
        return out

    def cdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        ln_z, ln_s = self._log_masses()
        masses = np.exp(ln_z - ln_s)
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        q = self.spec.grid.edges()
        a, b, c = self.index.expand(self.params)
        out = np.empty_like(x)
        for k, xv in enumerate(x):
            if xv <= q[0]:
                out[k] = 0.0
                continue
            if xv >= q[-1]:
                out[k] = 1.0
                continue
            i = int(self.spec.grid.bin_index(xv))
            frac = 0.0
            if masses[i] > 0.0:
                frac = _bin_cdf_fraction(q[i], q[i + 1], b[i], c[i], xv)
            out[k] = min(1.0, cum[i] + masses[i] * frac)
        return out

    def quantile(self, u) -> np.ndarray:
        """Inverse CDF; vectorized, exact per-bin inversion."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u < 0.0) | (u > 1.0)):
            raise ShapeMismatch("quantile levels must lie in [0, 1]")
        ln_z, ln_s = self._log_masses()
        masses = np.exp(ln_z - ln_s)
        cum = np.cumsum(masses)
        cum[-1] = 1.0
        q = self.spec.grid.edges()
        a, b, c = self.index.expand(self.params)
        bins = np.searchsorted(cum, u, side="left")
        bins = np.minimum(bins, self.spec.n_bins - 1)
        # route hits on zero-mass bins to the next live bin (or the last one)
        alive = masses > 0.0
        live_idx = np.nonzero(alive)[0]
        forward = np.full(self.spec.n_bins, live_idx[-1])
        nxt = live_idx[-1]
        for i in range(self.spec.n_bins - 1, -1, -1):
            if alive[i]:
                nxt = i
            forward[i] = nxt
        bins = forward[bins]
        lower = np.concatenate([[0.0], cum])[bins]
        rel = np.clip((u - lower) / masses[bins], 0.0, 1.0)
        out = np.empty_like(u)
        for i in np.unique(bins):
            sel = bins == i
            out[sel] = _bin_ppf(q[i], q[i + 1], b[i], c[i], rel[sel])
        return out

    def sample(self, n: int, seed=None) -> np.ndarray:
        """Draw ``n`` values; deterministic for a given seed."""
        rng = np.random.default_rng(seed)
        return self.quantile(rng.random(n))

    def mean(self) -> float:
        ln_z, ln_s = self._log_masses()
        _, mom = bin_log_norms(self.index, self.params, order=1)
        p = np.exp(ln_z - ln_s)
        return float(np.sum(p * np.where(p > 0, mom[0], 0.0)))

    def second_moment(self) -> float:
        ln_z, ln_s = self._log_masses()
        _, mom = bin_log_norms(self.index, self.params, order=2)
        p = np.exp(ln_z - ln_s)
        return float(np.sum(p * np.where(p > 0, mom[1], 0.0)))

    # -- serialization -----------------------------------------------------
    def to_json_dict(self) -> dict:
        out = {
            "kind": "univariate",
            "spec": self.spec.to_json_dict(),
            "params": self.params.tolist(),
            "param_labels": self.index.labels(),
            "clamped_bins": list(self.clamped_bins),
            "gauge": "first active count multiplier pinned to 0",
        }
        if self.log_likelihood is not None:
            out["log_likelihood"] = self.log_likelihood
        if self.targets is not None:
            out["targets"] = {
                "counts": self.targets.counts.tolist(),
                "sums": self.targets.sums.tolist(),
                "sq_sums": self.targets.sq_sums.tolist(),
                "n_total": self.targets.n_total,
            }
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "UnivariateModel":
        targets = None
        if "targets" in obj:
            t = obj["targets"]
            targets = BinStatistics(
                counts=np.asarray(t["counts"], dtype=float),
                sums=np.asarray(t["sums"], dtype=float),
                sq_sums=np.asarray(t["sq_sums"], dtype=float),
                n_total=int(t["n_total"]),
            )
        return cls(
            spec=UnivariateSpec.from_json_dict(obj["spec"]),
            params=np.asarray(obj["params"], dtype=float),
            clamped_bins=tuple(obj.get("clamped_bins") or ()),
            log_likelihood=obj.get("log_likelihood"),
            targets=targets,
        )


def _bin_cdf_fraction(lo: float, hi: float, b: float, c: float, x: float) -> float:
    """P(X <= x | X in bin) for the bin's exponential-family weight."""
    if c > 0.0:
        mu = -b / (2.0 * c)
        s = 1.0 / math.sqrt(2.0 * c)
        alpha = -math.inf if math.isinf(lo) else (lo - mu) / s
        beta = math.inf if math.isinf(hi) else (hi - mu) / s
        xs = (x - mu) / s
        num = _log_phi_diff(alpha, xs)
        den = _log_phi_diff(alpha, beta)
        return math.exp(num - den)
    if b == 0.0:
        return (x - lo) / (hi - lo)
    if b > 0.0:
        # mass decays away from lo
        if math.isinf(hi):
            return -math.expm1(-b * (x - lo))
        return math.expm1(-b * (x - lo)) / math.expm1(-b * (hi - lo))
    # b < 0: mass decays away from hi
    if math.isinf(lo):
        return math.exp(-b * (x - hi))
    u_x = -b * (x - hi)
    u_lo = -b * (lo - hi)
    return (math.expm1(u_x) - math.expm1(u_lo)) / -math.expm1(u_lo)


def _truncnorm_ppf_std(u: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """Quantiles of the standard normal truncated to [alpha, beta]."""
    if alpha > 0.0:
        return -_truncnorm_ppf_std(1.0 - u, -beta, -alpha)
    la = log_ndtr(alpha) if not math.isinf(alpha) else -math.inf
    ln_diff = _log_phi_diff(alpha, beta)
    with np.errstate(divide="ignore"):
        ln_u = np.log(u)
    target = np.logaddexp(la, ln_u + ln_diff)
    return ndtri_exp(np.minimum(target, 0.0))


def _bin_ppf(lo: float, hi: float, b: float, c: float, u: np.ndarray) -> np.ndarray:
    """Within-bin inverse CDF at relative levels ``u`` in [0, 1]."""
    u = np.asarray(u, dtype=float)
    if c > 0.0:
        mu = -b / (2.0 * c)
        s = 1.0 / math.sqrt(2.0 * c)
        alpha = -math.inf if math.isinf(lo) else (lo - mu) / s
        beta = math.inf if math.isinf(hi) else (hi - mu) / s
        return mu + s * _truncnorm_ppf_std(u, alpha, beta)
    if b == 0.0:
        return lo + u * (hi - lo)
    if b > 0.0:
        if math.isinf(hi):
            with np.errstate(divide="ignore"):
                return lo - np.log1p(-u) / b
        total = -math.expm1(-b * (hi - lo))
        return lo - np.log1p(-u * total) / b
    # b < 0: invert through the mirrored coordinate y = hi - x
    v = 1.0 - u
    rate = -b
    if math.isinf(lo):
        with np.errstate(divide="ignore"):
            y = -np.log1p(-v) / rate
        return hi - y
    total = -math.expm1(-rate * (hi - lo))
    y = -np.log1p(-v * total) / rate
    return hi - y


# ---------------------------------------------------------------------------
# free functions
# ---------------------------------------------------------------------------

def log_partition(model: UnivariateModel) -> float:
    """Log normalizer of the full T-draw ensemble."""
    return model.log_partition()


def kl_divergence(
    model: UnivariateModel | Callable[[np.ndarray], np.ndarray],
    reference: Callable[[np.ndarray], np.ndarray],
    breakpoints: Sequence[float] | None = None,
    *,
    tail_floor: float = 1e-14,
) -> float:
    """KL divergence D(model || reference), per draw, by piecewise quadrature.

    ``reference`` is a vectorized density.  Integration splits at the model's
    bin edges plus any supplied ``breakpoints``; each closed segment uses
    adaptive Gauss-Kronrod quadrature, and unbounded tails are integrated out
    to where the model density falls below ``tail_floor``.
    """
    if isinstance(model, UnivariateModel):
        p = model.density
        edges = list(model.spec.grid.edges())
    else:
        p = model
        edges = []
    pts = set(float(v) for v in (breakpoints or ()))
    pts.update(float(v) for v in edges)
    finite = sorted(v for v in pts if math.isfinite(v))
    if len(finite) < 2:
        raise ShapeMismatch("need at least two finite breakpoints")
    lower_open = any(math.isinf(v) and v < 0 for v in pts)
    upper_open = any(math.isinf(v) and v > 0 for v in pts)

    def integrand(x: float) -> float:
        px = float(p(np.array([x]))[0])
        if px <= 0.0:
            return 0.0
        qx = float(reference(np.array([x]))[0])
        qx = max(qx, 1e-300)
        return px * math.log(px / qx)

    segs: list[tuple[float, float]] = []
    if lower_open:
        # walk left until the model mass is negligible
        left = finite[0]
        step = max(1.0, abs(left))
        while float(p(np.array([left]))[0]) > tail_floor and step < 1e8:
            left -= step
            step *= 2.0
        segs.append((left, finite[0]))
    segs.extend(zip(finite, finite[1:]))
    if upper_open:
        right = finite[-1]
        step = max(1.0, abs(right))
        while float(p(np.array([right]))[0]) > tail_floor and step < 1e8:
            right += step
            step *= 2.0
        segs.append((finite[-1], right))

    total = 0.0
    for lo, hi in segs:
        if hi <= lo:
            continue
        val, _ = quad(integrand, lo, hi, limit=200)
        total += val
    return total


def information_criterion(model: UnivariateModel, which: str = "aic") -> float:
    """AIC ``2k - 2 lnL`` or BIC ``k ln T - 2 lnL``.

    ``k`` is the declared multiplier count of the family (the gauge
    redundancy is counted, mirroring the constraint count).
    """
    if model.log_likelihood is None:
        raise NotCalibrated("information criteria need a calibrated model")
    k = model.spec.declared_param_count()
    t = model.spec.n_samples
    lnl = model.log_likelihood
    w = which.lower()
    if w == "aic":
        return 2.0 * k - 2.0 * lnl
    if w == "bic":
        return k * math.log(t) - 2.0 * lnl
    raise ShapeMismatch(f"unknown criterion {which!r}")
