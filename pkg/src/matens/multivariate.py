"""Matrix ensembles with row/column occupancy and magnitude constraints.

Each cell (i, t) of an N x T matrix is decomposed into a sign occupancy
(positive, negative, or -- in the ``with_missing`` variant -- missing) and a
nonnegative magnitude.  Constraining, per row and per column, the occupancy
counts of each sign and the cumulative magnitudes of each sign yields a
product ensemble: cells are independent given the multipliers, and each
cell's normalizer has three (``with_missing``) or two (``no_missing``)
closed-form terms.

Multiplier families
-------------------
``alpha``  -- positive-occupancy counts          (rows and columns)
``beta``   -- negative-occupancy counts          (``with_missing`` only)
``gamma``  -- cumulative positive magnitudes
``sigma``  -- cumulative negative magnitudes

In the ``no_missing`` variant the negative count is T minus the positive
count row-wise (and N minus it column-wise), so ``beta`` is unidentifiable
and pinned to zero; dropping ``alpha`` as well gives the magnitude-only
family pair used by the leaner risk models.

Within each family the model only depends on row+column sums, so a constant
can be traded between rows and columns; when every live column carries a
multiplier the first one is pinned to zero as the gauge choice.

Cell marginals are two-sided exponential mixtures: the positive magnitude
has rate ``gamma_i + gamma_t``, the negative ``sigma_i + sigma_t``, with
occupancy weights read off the cell normalizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DataMatrix, MarginConstraints
from .errors import (
    DivergentPartition,
    InfeasibleConstraints,
    ShapeMismatch,
)

__all__ = [
    "VARIANTS",
    "FAMILY_NAMES",
    "MultiplierSet",
    "ConstraintSpec",
    "ClampSet",
    "CellMarginal",
    "PhysicalQuantities",
    "OutOfPhysicalRegion",
    "EnsembleModel",
    "cell_partition",
    "physical_quantities",
]

VARIANTS = ("with_missing", "no_missing")
FAMILY_NAMES = ("alpha", "beta", "gamma", "sigma")


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MultiplierSet:
    """Row and column multipliers of the four constraint families."""

    variant: str
    alpha_row: np.ndarray
    beta_row: np.ndarray
    gamma_row: np.ndarray
    sigma_row: np.ndarray
    alpha_col: np.ndarray
    beta_col: np.ndarray
    gamma_col: np.ndarray
    sigma_col: np.ndarray

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ShapeMismatch(f"unknown variant {self.variant!r}")
        n = None
        t = None
        for fam in FAMILY_NAMES:
            r = np.array(getattr(self, f"{fam}_row"), dtype=float)
            c = np.array(getattr(self, f"{fam}_col"), dtype=float)
            if r.ndim != 1 or c.ndim != 1:
                raise ShapeMismatch("multiplier arrays must be 1-D")
            n = r.size if n is None else n
            t = c.size if t is None else t
            if r.size != n or c.size != t:
                raise ShapeMismatch("multiplier arrays must align across families")
            object.__setattr__(self, f"{fam}_row", _freeze(r))
            object.__setattr__(self, f"{fam}_col", _freeze(c))
        if self.variant == "no_missing":
            if np.any(self.beta_row != 0.0) or np.any(self.beta_col != 0.0):
                raise ShapeMismatch(
                    "no_missing pins the negative-count family to zero"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha_row.size, self.alpha_col.size

    def pair_sums(self, family: str) -> np.ndarray:
        """(N, T) matrix of row+column multiplier sums for one family."""
        return (
            getattr(self, f"{family}_row")[:, None]
            + getattr(self, f"{family}_col")[None, :]
        )

    @classmethod
    def zeros(cls, variant: str, n_rows: int, n_cols: int) -> "MultiplierSet":
        z_r = np.zeros(n_rows)
        z_c = np.zeros(n_cols)
        return cls(
            variant=variant,
            alpha_row=z_r.copy(), beta_row=z_r.copy(),
            gamma_row=z_r.copy(), sigma_row=z_r.copy(),
            alpha_col=z_c.copy(), beta_col=z_c.copy(),
            gamma_col=z_c.copy(), sigma_col=z_c.copy(),
        )

    def to_json_dict(self) -> dict:
        return {"variant": self.variant} | {
            f"{fam}_{axis}": getattr(self, f"{fam}_{axis}").tolist()
            for fam in FAMILY_NAMES
            for axis in ("row", "col")
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MultiplierSet":
        kw = {
            f"{fam}_{axis}": np.asarray(obj[f"{fam}_{axis}"], dtype=float)
            for fam in FAMILY_NAMES
            for axis in ("row", "col")
        }
        return cls(variant=obj["variant"], **kw)


@dataclass(frozen=True)
class ConstraintSpec:
    """Which margin constraints are imposed.

    ``families`` picks the active multiplier families; the magnitude pair
    ``gamma``/``sigma`` is mandatory (the cell density cannot normalize
    without both rates).  ``constrained_cols`` marks columns whose margins
    are constrained; unconstrained columns keep zero multipliers, which is
    how perturbation cells in rolling-window risk models stay free.
    """

    variant: str
    families: tuple[str, ...]
    n_rows: int
    n_cols: int
    constrained_cols: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ShapeMismatch(f"unknown variant {self.variant!r}")
        fams = tuple(str(f) for f in self.families)
        for f in fams:
            if f not in FAMILY_NAMES:
                raise ShapeMismatch(f"unknown family {f!r}")
        if "gamma" not in fams or "sigma" not in fams:
            raise ShapeMismatch("gamma and sigma families are mandatory")
        if self.variant == "no_missing" and "beta" in fams:
            raise ShapeMismatch("no_missing has no negative-count family")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ShapeMismatch("spec needs at least one row and column")
        cc = self.constrained_cols
        if cc is None:
            cc = np.ones(self.n_cols, dtype=bool)
        else:
            cc = np.array(cc, dtype=bool)
            if cc.shape != (self.n_cols,):
                raise ShapeMismatch("constrained_cols must have one flag per column")
            if not cc.any():
                raise ShapeMismatch("at least one column must be constrained")
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "constrained_cols", _freeze(cc))

    @property
    def all_cols_constrained(self) -> bool:
        return bool(self.constrained_cols.all())

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "families": list(self.families),
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "constrained_cols": self.constrained_cols.astype(int).tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ConstraintSpec":
        cc = obj.get("constrained_cols")
        return cls(
            variant=obj["variant"],
            families=tuple(obj["families"]),
            n_rows=int(obj["n_rows"]),
            n_cols=int(obj["n_cols"]),
            constrained_cols=None if cc is None else np.asarray(cc, dtype=bool),
        )


@dataclass(frozen=True)
class ClampSet:
    """Rows/columns whose positive or negative class is pinned to zero mass.

    A margin with zero occupancy count and zero cumulative magnitude cannot
    be matched by finite multipliers; the corresponding constraints are
    dropped and the class probability is clamped to exactly zero.
    """

    row_plus: np.ndarray
    row_minus: np.ndarray
    col_plus: np.ndarray
    col_minus: np.ndarray

    def __post_init__(self) -> None:
        for name in ("row_plus", "row_minus", "col_plus", "col_minus"):
            a = np.array(getattr(self, name), dtype=bool)
            object.__setattr__(self, name, _freeze(a))
        if self.row_plus.shape != self.row_minus.shape:
            raise ShapeMismatch("row clamp arrays must align")
        if self.col_plus.shape != self.col_minus.shape:
            raise ShapeMismatch("column clamp arrays must align")

    @property
    def any_clamped(self) -> bool:
        return bool(
            self.row_plus.any()
            or self.row_minus.any()
            or self.col_plus.any()
            or self.col_minus.any()
        )

    def plus_active(self) -> np.ndarray:
        return ~(self.row_plus[:, None] | self.col_plus[None, :])

    def minus_active(self) -> np.ndarray:
        return ~(self.row_minus[:, None] | self.col_minus[None, :])

    @classmethod
    def none(cls, n_rows: int, n_cols: int) -> "ClampSet":
        return cls(
            row_plus=np.zeros(n_rows, dtype=bool),
            row_minus=np.zeros(n_rows, dtype=bool),
            col_plus=np.zeros(n_cols, dtype=bool),
            col_minus=np.zeros(n_cols, dtype=bool),
        )

    @classmethod
    def from_margins(
        cls,
        margins: MarginConstraints,
        constrained_cols: np.ndarray | None = None,
    ) -> "ClampSet":
        """Derive clamps from the margins that are actually imposed.

        Columns outside ``constrained_cols`` carry no constraints, so their
        empty margins must not pin any class mass: those cells keep the law
        dictated by the row multipliers alone.
        """

        def degenerate(
            n: np.ndarray,
            s: np.ndarray,
            label: str,
            active: np.ndarray | None,
        ) -> np.ndarray:
            bad = (n == 0) & (s > 0)
            weird = (n > 0) & (s == 0)
            out = (n == 0) & (s == 0)
            if active is not None:
                bad &= active
                weird &= active
                out &= active
            if np.any(bad):
                raise InfeasibleConstraints(
                    f"{label}: positive cumulative magnitude with zero count "
                    f"at indices {np.nonzero(bad)[0].tolist()}"
                )
            if np.any(weird):
                raise InfeasibleConstraints(
                    f"{label}: zero cumulative magnitude with nonzero count "
                    f"at indices {np.nonzero(weird)[0].tolist()} "
                    "(no finite rate multiplier can match it)"
                )
            return out

        cc = None
        if constrained_cols is not None:
            cc = np.asarray(constrained_cols, dtype=bool)
        return cls(
            row_plus=degenerate(
                margins.n_plus_row, margins.s_plus_row, "row plus", None
            ),
            row_minus=degenerate(
                margins.n_minus_row, margins.s_minus_row, "row minus", None
            ),
            col_plus=degenerate(
                margins.n_plus_col, margins.s_plus_col, "col plus", cc
            ),
            col_minus=degenerate(
                margins.n_minus_col, margins.s_minus_col, "col minus", cc
            ),
        )

    def to_json_dict(self) -> dict:
        return {
            name: getattr(self, name).astype(int).tolist()
            for name in ("row_plus", "row_minus", "col_plus", "col_minus")
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ClampSet":
        return cls(**{k: np.asarray(v, dtype=bool) for k, v in obj.items()})


@dataclass(frozen=True)
class CellMarginal:
    """Occupancy weights and magnitude rates of one cell."""

    p_plus: float
    p_minus: float
    p_missing: float
    rate_plus: float
    rate_minus: float

    def mean(self) -> float:
        m = 0.0
        if self.p_plus > 0.0:
            m += self.p_plus / self.rate_plus
        if self.p_minus > 0.0:
            m -= self.p_minus / self.rate_minus
        return m

    def second_moment(self) -> float:
        m = 0.0
        if self.p_plus > 0.0:
            m += 2.0 * self.p_plus / self.rate_plus ** 2
        if self.p_minus > 0.0:
            m += 2.0 * self.p_minus / self.rate_minus ** 2
        return m

    def variance(self) -> float:
        return self.second_moment() - self.mean() ** 2


@dataclass(frozen=True)
class PhysicalQuantities:
    """Three-level single-cell description equivalent to the multipliers."""

    temperature: float
    energy_level: float
    chem_potential_plus: float
    chem_potential_minus: float


@dataclass(frozen=True)
class OutOfPhysicalRegion:
    """Typed condition: the cell has no finite three-level description."""

    i: int
    t: int
    reason: str


class _CellArrays:
    """Derived per-cell quantities shared by the model methods."""

    __slots__ = (
        "log_t_plus", "log_t_minus", "log_z",
        "p_plus", "p_minus", "p_missing",
        "rate_plus", "rate_minus",
        "plus_active", "minus_active",
    )

    def __init__(self, spec, ms, clamps):
        n, t = ms.shape
        a = ms.pair_sums("alpha")
        b = ms.pair_sums("beta")
        g = ms.pair_sums("gamma")
        s = ms.pair_sums("sigma")
        plus_active = clamps.plus_active()
        minus_active = clamps.minus_active()
        if np.any(g[plus_active] <= 0.0):
            raise DivergentPartition(
                "positive-magnitude rate (gamma row+col) must be positive on "
                "every live cell"
            )
        if np.any(s[minus_active] <= 0.0):
            raise DivergentPartition(
                "negative-magnitude rate (sigma row+col) must be positive on "
                "every live cell"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.where(plus_active, -a - np.log(np.where(plus_active, g, 1.0)), -np.inf)
            lm = np.where(minus_active, -b - np.log(np.where(minus_active, s, 1.0)), -np.inf)
        if spec.variant == "with_missing":
            log_z = np.logaddexp(np.logaddexp(0.0, lp), lm)
        else:
            if np.any(~plus_active & ~minus_active):
                raise InfeasibleConstraints(
                    "a fully clamped cell has no occupancy state in no_missing"
                )
            log_z = np.logaddexp(lp, lm)
        self.log_t_plus = lp
        self.log_t_minus = lm
        self.log_z = log_z
        with np.errstate(invalid="ignore"):
            self.p_plus = np.exp(lp - log_z)
            self.p_minus = np.exp(lm - log_z)
        if spec.variant == "with_missing":
            self.p_missing = np.exp(-log_z)
        else:
            self.p_missing = np.zeros((n, t))
        self.rate_plus = g
        self.rate_minus = s
        self.plus_active = plus_active
        self.minus_active = minus_active


@dataclass(frozen=True)
class EnsembleModel:
    """A (usually calibrated) matrix ensemble: spec + multipliers + clamps."""

    spec: ConstraintSpec
    multipliers: MultiplierSet
    clamps: ClampSet | None = None
    margins: MarginConstraints | None = None
    log_likelihood: float | None = None

    def __post_init__(self) -> None:
        if self.multipliers.variant != self.spec.variant:
            raise ShapeMismatch("spec and multipliers disagree on the variant")
        if self.multipliers.shape != (self.spec.n_rows, self.spec.n_cols):
            raise ShapeMismatch("spec and multipliers disagree on the shape")
        clamps = self.clamps or ClampSet.none(self.spec.n_rows, self.spec.n_cols)
        if clamps.row_plus.size != self.spec.n_rows or clamps.col_plus.size != self.spec.n_cols:
            raise ShapeMismatch("clamp arrays do not match the spec shape")
        object.__setattr__(self, "clamps", clamps)
        object.__setattr__(
            self, "_cells", _CellArrays(self.spec, self.multipliers, clamps)
        )

    # -- per-cell quantities ----------------------------------------------
    @property
    def cells(self) -> _CellArrays:
        return self._cells

    @property
    def shape(self) -> tuple[int, int]:
        return self.multipliers.shape

    def cell_log_partition(self, i: int, t: int) -> float:
        return float(self._cells.log_z[i, t])

    def log_partition(self) -> float:
        """Log normalizer of the whole matrix ensemble (sum over cells)."""
        return float(np.sum(self._cells.log_z))

    def marginal(self, i: int, t: int) -> CellMarginal:
        c = self._cells
        return CellMarginal(
            p_plus=float(c.p_plus[i, t]),
            p_minus=float(c.p_minus[i, t]),
            p_missing=float(c.p_missing[i, t]),
            rate_plus=float(c.rate_plus[i, t]),
            rate_minus=float(c.rate_minus[i, t]),
        )

    def mean_matrix(self, *, conditional: bool = False) -> np.ndarray:
        """Per-cell expected value; missing counts as zero unless conditional."""
        c = self._cells
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.where(c.p_plus > 0, c.p_plus / c.rate_plus, 0.0) - np.where(
                c.p_minus > 0, c.p_minus / c.rate_minus, 0.0
            )
        if conditional:
            obs = 1.0 - c.p_missing
            m = np.where(obs > 0, m / np.where(obs > 0, obs, 1.0), 0.0)
        return m

    def second_moment_matrix(self, *, conditional: bool = False) -> np.ndarray:
        c = self._cells
        with np.errstate(divide="ignore", invalid="ignore"):
            m2 = 2.0 * np.where(c.p_plus > 0, c.p_plus / c.rate_plus ** 2, 0.0)
            m2 = m2 + 2.0 * np.where(c.p_minus > 0, c.p_minus / c.rate_minus ** 2, 0.0)
        if conditional:
            obs = 1.0 - c.p_missing
            m2 = np.where(obs > 0, m2 / np.where(obs > 0, obs, 1.0), 0.0)
        return m2

    def variance_matrix(self, *, conditional: bool = False) -> np.ndarray:
        m = self.mean_matrix(conditional=conditional)
        return self.second_moment_matrix(conditional=conditional) - m * m

    # -- margins and likelihood --------------------------------------------
    def expected_margins(self) -> MarginConstraints:
        """Expected occupancy counts and cumulative magnitudes per row/col."""
        c = self._cells
        with np.errstate(divide="ignore", invalid="ignore"):
            w_plus = np.where(c.p_plus > 0, c.p_plus / c.rate_plus, 0.0)
            w_minus = np.where(c.p_minus > 0, c.p_minus / c.rate_minus, 0.0)
        obs = 1.0 - c.p_missing
        return MarginConstraints(
            n_plus_row=c.p_plus.sum(axis=1),
            n_minus_row=c.p_minus.sum(axis=1),
            s_plus_row=w_plus.sum(axis=1),
            s_minus_row=w_minus.sum(axis=1),
            n_obs_row=obs.sum(axis=1),
            n_plus_col=c.p_plus.sum(axis=0),
            n_minus_col=c.p_minus.sum(axis=0),
            s_plus_col=w_plus.sum(axis=0),
            s_minus_col=w_minus.sum(axis=0),
            n_obs_col=obs.sum(axis=0),
        )

    def log_likelihood_of(self, data: DataMatrix) -> float:
        """Log probability density of an observed matrix under the ensemble."""
        if data.shape != self.shape:
            raise ShapeMismatch("data shape does not match the model")
        if self.spec.variant == "no_missing" and data.has_missing:
            raise ShapeMismatch(
                "no_missing ensembles assign zero probability to missing cells"
            )
        c = self._cells
        v = np.where(data.mask, data.values, 0.0)
        pos = data.mask & (v >= 0.0)
        neg = data.mask & (v < 0.0)
        if np.any(pos & ~c.plus_active) or np.any(neg & ~c.minus_active):
            return -math.inf
        ms = self.multipliers
        a = ms.pair_sums("alpha")
        b = ms.pair_sums("beta")
        g = c.rate_plus
        s = c.rate_minus
        hamiltonian = (
            np.sum(a[pos])
            + np.sum(b[neg])
            + np.sum(g[pos] * v[pos])
            + np.sum(s[neg] * (-v[neg]))
        )
        return -hamiltonian - self.log_partition()

    # -- cell value distribution (conditional on being observed) ------------
    def cell_conditional_cdf(self, i: int, t: int, x: np.ndarray) -> np.ndarray:
        m = self.marginal(i, t)
        obs = m.p_plus + m.p_minus
        if obs <= 0.0:
            raise DivergentPartition(f"cell ({i},{t}) is never observed")
        pp = m.p_plus / obs
        pm = m.p_minus / obs
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        neg = x < 0
        out[neg] = pm * np.exp(m.rate_minus * x[neg])
        out[~neg] = pm + pp * -np.expm1(-m.rate_plus * x[~neg])
        return out

    def cell_conditional_quantile(self, i: int, t: int, u: np.ndarray) -> np.ndarray:
        m = self.marginal(i, t)
        obs = m.p_plus + m.p_minus
        if obs <= 0.0:
            raise DivergentPartition(f"cell ({i},{t}) is never observed")
        pp = m.p_plus / obs
        pm = m.p_minus / obs
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u < 0.0) | (u > 1.0)):
            raise ShapeMismatch("quantile levels must lie in [0, 1]")
        out = np.zeros_like(u)
        lower = (u < pm) & (pm > 0.0)
        with np.errstate(divide="ignore"):
            out[lower] = np.log(u[lower] / pm) / m.rate_minus
        upper = ~lower
        if pp > 0.0:
            rel = np.clip((u[upper] - pm) / pp, 0.0, 1.0)
            with np.errstate(divide="ignore"):
                out[upper] = -np.log1p(-rel) / m.rate_plus
        else:
            out[upper] = 0.0
        return out

    # -- sampling ------------------------------------------------------------
    def sample(self, seed=None) -> DataMatrix:
        """Draw one synthetic matrix; deterministic for a given seed.

        The draw consumes exactly one uniform and one unit exponential per
        cell, so results do not depend on how many cells end up missing.
        """
        rng = np.random.default_rng(seed)
        n, t = self.shape
        u = rng.random((n, t))
        e = rng.standard_exponential((n, t))
        c = self._cells
        safe_plus = np.where(c.rate_plus > 0, c.rate_plus, 1.0)
        safe_minus = np.where(c.rate_minus > 0, c.rate_minus, 1.0)
        take_plus = u < c.p_plus
        take_minus = (~take_plus) & (u < c.p_plus + c.p_minus)
        values = np.where(
            take_plus, e / safe_plus, np.where(take_minus, -e / safe_minus, np.nan)
        )
        mask = take_plus | take_minus
        return DataMatrix(values=np.where(mask, values, np.nan), mask=mask)

    # -- serialization ---------------------------------------------------------
    def to_json_dict(self) -> dict:
        out = {
            "kind": "matrix",
            "spec": self.spec.to_json_dict(),
            "multipliers": self.multipliers.to_json_dict(),
            "clamps": self.clamps.to_json_dict(),
            "gauge": "first live constrained column pinned to 0 per family",
        }
        if self.margins is not None:
            out["margins"] = self.margins.to_json_dict()
        if self.log_likelihood is not None:
            out["log_likelihood"] = self.log_likelihood
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EnsembleModel":
        margins = obj.get("margins")
        return cls(
            spec=ConstraintSpec.from_json_dict(obj["spec"]),
            multipliers=MultiplierSet.from_json_dict(obj["multipliers"]),
            clamps=ClampSet.from_json_dict(obj["clamps"]) if "clamps" in obj else None,
            margins=None if margins is None else MarginConstraints.from_json_dict(margins),
            log_likelihood=obj.get("log_likelihood"),
        )


def cell_partition(model: EnsembleModel, i: int, t: int) -> float:
    """Closed-form normalizer of one cell's occupancy/magnitude sum."""
    return math.exp(model.cell_log_partition(i, t))


def physical_quantities(
    model: EnsembleModel, i: int, t: int
) -> PhysicalQuantities | OutOfPhysicalRegion:
    """Map one cell's multipliers to a three-level system description.

    Matching term by term: the positive state has Boltzmann weight
    ``exp((mu+ - eps)/T)``, the negative ``exp((mu- - eps)/T)``, the missing
    state weight 1, under the symmetric choice ``mu- = -mu+``.  Returns a
    typed :class:`OutOfPhysicalRegion` (never raises) when the mapping has a
    log of a nonpositive argument or an infinite temperature.
    """
    if model.spec.variant != "with_missing":
        return OutOfPhysicalRegion(
            i=i, t=t, reason="two-state cells (no_missing) have no three-level map"
        )
    ms = model.multipliers
    a = float(ms.alpha_row[i] + ms.alpha_col[t])
    b = float(ms.beta_row[i] + ms.beta_col[t])
    g = float(ms.gamma_row[i] + ms.gamma_col[t])
    s = float(ms.sigma_row[i] + ms.sigma_col[t])
    if g <= 0.0 or s <= 0.0:
        return OutOfPhysicalRegion(i=i, t=t, reason="nonpositive magnitude rate")
    log_gs = math.log(g) + math.log(s)
    if log_gs == 0.0:
        return OutOfPhysicalRegion(i=i, t=t, reason="infinite temperature (g*s = 1)")
    temperature = 1.0 / log_gs
    energy = 0.5 + 0.5 * temperature * (a + b)
    mu_plus = 0.5 * temperature * (b - a + math.log(s) - math.log(g))
    return PhysicalQuantities(
        temperature=temperature,
        energy_level=energy,
        chem_potential_plus=mu_plus,
        chem_potential_minus=-mu_plus,
    )
