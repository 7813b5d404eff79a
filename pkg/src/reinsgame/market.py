"""Market data model: insurers, reinsurers, admissible indemnity structures.

An insurer is a bounded loss plus a distortion preference; a reinsurer is a
belief curve per loss plus a loading.  Assembling a market refines the working
grid at every breakpoint and pairwise crossing of the curves in play, so all
downstream cellwise logic (regimes, tie-breaks, order statistics) is exact.

Marginal indemnity matrices hold the derivative gamma of each contract on the
grid cells; the contracts themselves are recovered as running integrals,
which makes the no-sabotage class (nondecreasing, 1-Lipschitz, fixing 0)
automatic whenever gamma stays in [0, 1] with row sums at most 1.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .curves import (
    DistortionSpec,
    Grid,
    LossModel,
    PiecewiseExpCurve,
    SurvivalCurve,
    compose_distortion,
    distort,
    kth_lowest,
    refine_crossings,
    scale,
)
from .errors import GridMismatchError, UnsupportedRegimeError, ValidationError

__all__ = [
    "InsurerSpec",
    "ReinsurerSpec",
    "MarketSpec",
    "MarginalIndemnityMatrix",
    "Allocation",
    "PricingMatrix",
    "IndemnityFunction",
    "DEPENDENCE_REGIMES",
    "SUPPORTED_REGIMES",
    "true_preferences",
    "second_lowest_preference",
    "indemnity_from_marginal",
    "indemnity_profile",
    "flatten_incremental",
    "load_market",
]

#: Dependence regimes a market may declare.  The first two admit additive
#: reinsurer evaluation; "general" markets load fine but equilibrium and
#: Pareto evaluations refuse them.
SUPPORTED_REGIMES = ("risk-neutral-reinsurers", "comonotone-losses")
DEPENDENCE_REGIMES = SUPPORTED_REGIMES + ("general",)

_GAMMA_TOL = 1e-9


@dataclass(frozen=True)
class InsurerSpec:
    """One insurer: its loss model and its distortion preference."""

    loss: LossModel
    preference: DistortionSpec


@dataclass(frozen=True)
class ReinsurerSpec:
    """One reinsurer: belief curves (one per insurer, or one shared), a
    loading factor theta > 0, and whether the belief is a probability."""

    beliefs: tuple[LossModel, ...]
    loading: float
    risk_neutral: bool = False

    def __post_init__(self) -> None:
        if self.loading <= 0:
            raise ValidationError(f"loading must be > 0, got {self.loading}")
        if not self.beliefs:
            raise ValidationError("reinsurer needs at least one belief curve")

    def belief_for(self, i: int, n: int) -> LossModel:
        if len(self.beliefs) == n:
            return self.beliefs[i]
        if len(self.beliefs) == 1:
            return self.beliefs[0]
        raise ValidationError(
            f"reinsurer supplies {len(self.beliefs)} belief curves for {n} insurers"
        )


@dataclass(frozen=True)
class MarketSpec:
    """Validated market with its crossing-refined working grid.

    ``alpha[i]`` is insurer i's distorted curve and ``beliefs[i][j]`` the
    unscaled belief curve of reinsurer j about loss i, both sampled on
    ``grid``.  Immutable after assembly; safe for concurrent reads.
    """

    insurers: tuple[InsurerSpec, ...]
    reinsurers: tuple[ReinsurerSpec, ...]
    grid: Grid
    dependence: str
    alpha: tuple[SurvivalCurve, ...]
    beliefs: tuple[tuple[SurvivalCurve, ...], ...]

    @property
    def n(self) -> int:
        return len(self.insurers)

    @property
    def m(self) -> int:
        return len(self.reinsurers)

    @property
    def upper_bound(self) -> float:
        return self.grid.upper_bound

    @property
    def loadings(self) -> np.ndarray:
        return np.array([r.loading for r in self.reinsurers])

    @classmethod
    def assemble(
        cls,
        insurers: Sequence[InsurerSpec],
        reinsurers: Sequence[ReinsurerSpec],
        upper_bound: float,
        grid_cells: int,
        dependence: str,
        eps_eq: float = 1e-9,
        eps_ref: float = 1e-12,
    ) -> "MarketSpec":
        insurers = tuple(insurers)
        reinsurers = tuple(reinsurers)
        if not insurers or not reinsurers:
            raise ValidationError("market needs at least one insurer and one reinsurer")
        if dependence not in DEPENDENCE_REGIMES:
            raise ValidationError(
                f"dependence must be one of {DEPENDENCE_REGIMES}, got {dependence!r}"
            )
        if dependence == "risk-neutral-reinsurers":
            for j, r in enumerate(reinsurers):
                if not r.risk_neutral:
                    raise ValidationError(
                        f"dependence {dependence!r} requires reinsurer[{j}] "
                        "to be risk neutral"
                    )

        n = len(insurers)
        grid = Grid.uniform(upper_bound, grid_cells, eps_eq, eps_ref)

        # Refine per-insurer: each insurer's regime structure is driven by the
        # orderings within its own family {alpha_i, (1+theta_j) tau_j}.
        step_points: list[float] = []
        for i, ins in enumerate(insurers):
            family: list[PiecewiseExpCurve] = []
            labels: list[str] = []
            if ins.loss.analytic is not None:
                family.append(compose_distortion(ins.loss.analytic, ins.preference))
                labels.append(f"alpha[{i + 1}]")
            else:
                step_points.extend(ins.loss.breakpoints())
            for j, re in enumerate(reinsurers):
                belief = re.belief_for(i, n)
                if belief.analytic is not None:
                    family.append(belief.analytic.scaled(1.0 + re.loading))
                    labels.append(f"tau[{i + 1},{j + 1}]")
                else:
                    step_points.extend(belief.breakpoints())
            if family:
                grid = refine_crossings(family, grid, labels)
        if step_points:
            grid = grid.refined_with(step_points)

        alpha = tuple(
            distort(ins.loss, ins.preference, grid) for ins in insurers
        )
        beliefs = tuple(
            tuple(
                re.belief_for(i, n).survival(grid, require_probability=re.risk_neutral)
                for re in reinsurers
            )
            for i in range(n)
        )
        return cls(insurers, reinsurers, grid, dependence, alpha, beliefs)

    def regime_supported(self) -> bool:
        return self.dependence in SUPPORTED_REGIMES

    def require_supported(self, operation: str) -> None:
        """Reinsurer aggregates are additive across contracts only for
        risk-neutral beliefs or comonotone losses; refuse anything else."""
        if not self.regime_supported():
            raise UnsupportedRegimeError(
                f"{operation} requires a dependence regime in {SUPPORTED_REGIMES}; "
                f"this market declares {self.dependence!r}"
            )


@dataclass(frozen=True)
class MarginalIndemnityMatrix:
    """gamma[i, j, cell] in [0, 1] with sum over j at most 1 on every cell.

    Indemnities are the running integrals I_ij(x) = int_0^x gamma_ij, so the
    constraint is exactly membership of each contract and of each insurer's
    total contract in the no-sabotage class.
    """

    gamma: np.ndarray

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g)
        if g.ndim != 3:
            raise ValidationError("gamma must have shape (insurers, reinsurers, cells)")
        if not np.all(np.isfinite(g)):
            raise ValidationError("gamma has non-finite entries")
        if np.any(g < -_GAMMA_TOL) or np.any(g > 1.0 + _GAMMA_TOL):
            raise ValidationError("gamma entries must lie in [0, 1]")
        if np.any(g.sum(axis=1) > 1.0 + _GAMMA_TOL):
            raise ValidationError("gamma rows must sum to at most 1 per cell")
        g.setflags(write=False)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    @property
    def m(self) -> int:
        return self.gamma.shape[1]

    def retained(self) -> np.ndarray:
        """gamma_{i0} = 1 - sum_j gamma_ij, the marginal retention."""
        return 1.0 - self.gamma.sum(axis=1)


@dataclass(frozen=True)
class Allocation:
    """An admissible indemnity structure together with its premia."""

    indemnities: MarginalIndemnityMatrix
    premia: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.premia, dtype=float)
        object.__setattr__(self, "premia", p)
        if p.shape != (self.indemnities.n, self.indemnities.m):
            raise ValidationError(
                f"premia shape {p.shape} does not match indemnities "
                f"({self.indemnities.n}, {self.indemnities.m})"
            )
        if not np.all(np.isfinite(p)):
            raise ValidationError("premia must be finite")
        p.setflags(write=False)


@dataclass(frozen=True)
class PricingMatrix:
    """Pricing capacities nu_ij evaluated along each loss's tail events."""

    curves: tuple[tuple[SurvivalCurve, ...], ...]

    def __post_init__(self) -> None:
        if not self.curves or not self.curves[0]:
            raise ValidationError("pricing matrix must be nonempty")
        width = len(self.curves[0])
        if any(len(row) != width for row in self.curves):
            raise ValidationError("pricing matrix rows must have equal length")

    @property
    def n(self) -> int:
        return len(self.curves)

    @property
    def m(self) -> int:
        return len(self.curves[0])

    def validate_on(self, grid: Grid) -> None:
        for i, row in enumerate(self.curves):
            for j, curve in enumerate(row):
                grid.require_matches(curve.values, f"price nu[{i + 1},{j + 1}]")
                if not curve.is_nonincreasing(grid):
                    raise ValidationError(
                        f"price curve nu[{i + 1},{j + 1}] is not nonincreasing"
                    )

    def row_block(self, i: int) -> np.ndarray:
        """Cell values of insurer i's quotes, shape (m, cells)."""
        return np.stack([c.cell_values for c in self.curves[i]])


# ---------------------------------------------------------------------------
# Operations


def true_preferences(market: MarketSpec, i: int) -> list[SurvivalCurve]:
    """The m+1 curves [tau_{i,0}, ..., tau_{i,m}] on the refined grid: index 0
    is the insurer's own distorted curve, index j the loaded belief
    (1 + theta_j) * tau_j(X_i > .)."""
    out = [market.alpha[i]]
    for j, re in enumerate(market.reinsurers):
        curve = scale(market.beliefs[i][j], 1.0 + re.loading)
        out.append(SurvivalCurve(curve.values, label=f"tau[{i + 1},{j + 1}]"))
    return out


def second_lowest_preference(market: MarketSpec, i: int) -> SurvivalCurve:
    """Cellwise second order statistic of the true preferences: the price
    level every reinsurer quotes in the constructed equilibrium."""
    curve = kth_lowest(true_preferences(market, i), 1, market.grid)
    return SurvivalCurve(curve.values, label=f"tau_bar[{i + 1}]")


def indemnity_profile(gamma_cells: np.ndarray, grid: Grid) -> np.ndarray:
    """I(x) at every grid node for a cellwise marginal gamma."""
    gamma_cells = np.asarray(gamma_cells, dtype=float)
    if gamma_cells.shape != (grid.num_cells,):
        raise GridMismatchError(
            f"gamma has {gamma_cells.size} cells, grid has {grid.num_cells}"
        )
    out = np.empty(grid.num_cells + 1)
    out[0] = 0.0
    np.cumsum(gamma_cells * grid.widths, out=out[1:])
    return out


def indemnity_from_marginal(gamma_cells: np.ndarray, grid: Grid, x: float) -> float:
    """I(x) = int_0^x gamma(z) dz; nondecreasing and 1-Lipschitz in x by
    construction, with I(x) in [0, x]."""
    if not 0.0 <= x <= grid.upper_bound:
        raise ValidationError(f"x={x} outside [0, {grid.upper_bound}]")
    profile = indemnity_profile(gamma_cells, grid)
    idx = grid.cell_index(x) if x < grid.upper_bound else grid.num_cells
    if idx == grid.num_cells:
        return float(profile[-1])
    return float(profile[idx] + gamma_cells[idx] * (x - grid.nodes[idx]))


@dataclass(frozen=True)
class IndemnityFunction:
    """Piecewise-linear member of the no-sabotage class: nondecreasing,
    1-Lipschitz, fixing 0, represented by values at shared nodes."""

    nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise ValidationError("indemnity function needs matching nodes/values")
        if nodes[0] != 0.0 or not np.all(np.diff(nodes) > 0):
            raise ValidationError("indemnity nodes must increase from 0")
        if abs(values[0]) > _GAMMA_TOL:
            raise ValidationError("indemnity must fix 0")
        slopes = np.diff(values) / np.diff(nodes)
        if np.any(slopes < -_GAMMA_TOL) or np.any(slopes > 1.0 + _GAMMA_TOL):
            raise ValidationError("indemnity must be nondecreasing and 1-Lipschitz")
        nodes.setflags(write=False)
        values.setflags(write=False)

    def __call__(self, x) -> np.ndarray:
        return np.interp(x, self.nodes, self.values)

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.nodes)


def flatten_incremental(contracts: Sequence[IndemnityFunction]) -> list[IndemnityFunction]:
    """Rewrite incrementally purchased contracts as functions of the original
    loss.

    Contracts are applied in order to the running retained risk R_0 = x,
    R_j = R_{j-1} - I_j(R_{j-1}); the returned functions satisfy
    I~_j(x) = I_j(R_{j-1}(x)), each lies in the no-sabotage class, and so
    does their sum (the 1-Lipschitz bound survives composition pointwise).
    """
    if not contracts:
        raise ValidationError("flatten_incremental needs at least one contract")
    nodes = contracts[0].nodes
    for k, c in enumerate(contracts[1:], start=1):
        if not np.array_equal(c.nodes, nodes):
            raise ValidationError(f"contract[{k}] is not defined on the shared nodes")
    retained = nodes.copy()
    out: list[IndemnityFunction] = []
    for c in contracts:
        ceded = c(retained)
        out.append(IndemnityFunction(nodes, ceded))
        retained = retained - ceded
    total = np.sum([f.values for f in out], axis=0)
    IndemnityFunction(nodes, total)  # raises if the sum ever leaves the class
    return out


# ---------------------------------------------------------------------------
# Scenario files


def load_market(
    path: str | Path,
    grid_cells: int | None = None,
    eps_eq: float = 1e-9,
    eps_ref: float = 1e-12,
) -> MarketSpec:
    """Parse and validate a TOML scenario file.

    Schema: ``[market]`` M, grid_cells, dependence; repeated ``[[insurer]]``
    with ``dist`` and ``risk`` tables; repeated ``[[reinsurer]]`` with
    ``belief`` (one table, or a list with one table per insurer), ``loading``
    and ``risk_neutral``.  Every violation is reported with its field path.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"scenario file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: not valid TOML: {exc}") from None

    mkt = _require(raw, "market", dict, "market")
    upper = _require(mkt, "M", (int, float), "market.M")
    if upper <= 0:
        raise ValidationError(f"market.M: must be > 0, got {upper}")
    cells = grid_cells if grid_cells is not None else _require(
        mkt, "grid_cells", int, "market.grid_cells"
    )
    if cells < 2:
        raise ValidationError(f"market.grid_cells: must be >= 2, got {cells}")
    dependence = _require(mkt, "dependence", str, "market.dependence")
    if dependence not in DEPENDENCE_REGIMES:
        raise ValidationError(
            f"market.dependence: must be one of {DEPENDENCE_REGIMES}, got {dependence!r}"
        )

    raw_insurers = raw.get("insurer")
    if not raw_insurers:
        raise ValidationError("scenario defines no [[insurer]] entries")
    insurers = [
        _parse_insurer(entry, float(upper), f"insurer[{k}]")
        for k, entry in enumerate(raw_insurers)
    ]

    raw_reinsurers = raw.get("reinsurer")
    if not raw_reinsurers:
        raise ValidationError("scenario defines no [[reinsurer]] entries")
    reinsurers = [
        _parse_reinsurer(entry, float(upper), len(insurers), f"reinsurer[{k}]")
        for k, entry in enumerate(raw_reinsurers)
    ]

    return MarketSpec.assemble(
        insurers, reinsurers, float(upper), int(cells), dependence, eps_eq, eps_ref
    )


def _require(table: dict, key: str, types, where: str):
    if key not in table:
        raise ValidationError(f"{where}: missing required field {key!r}")
    value = table[key]
    if not isinstance(value, types) or isinstance(value, bool) and types is not bool:
        raise ValidationError(f"{where}.{key}: wrong type {type(value).__name__}")
    return value


def _parse_loss(entry: dict, upper: float, where: str) -> LossModel:
    kind = _require(entry, "kind", str, where)
    if kind == "censored-exp":
        rate = float(_require(entry, "rate", (int, float), where))
        cap = float(_require(entry, "cap", (int, float), where))
        if rate <= 0:
            raise ValidationError(f"{where}.rate: must be > 0, got {rate}")
        if not 0 < cap <= upper:
            raise ValidationError(f"{where}.cap: must lie in (0, M], got {cap}")
        return LossModel.censored_exponential(rate, cap, label=where)
    if kind == "table":
        nodes = _require(entry, "nodes", list, where)
        values = _require(entry, "values", list, where)
        try:
            return LossModel.from_table(nodes, values, label=where)
        except ValidationError as exc:
            raise ValidationError(f"{where}: {exc}") from None
    raise ValidationError(f"{where}.kind: unknown distribution kind {kind!r}")


def _parse_risk(entry: dict, where: str) -> DistortionSpec:
    kind = _require(entry, "kind", str, where)
    try:
        if kind == "es":
            return DistortionSpec.expected_shortfall(
                float(_require(entry, "level", (int, float), where))
            )
        if kind == "var":
            return DistortionSpec.value_at_risk(
                float(_require(entry, "level", (int, float), where))
            )
        if kind == "identity":
            return DistortionSpec.identity()
        if kind == "table":
            points = _require(entry, "points", list, where)
            return DistortionSpec.concave_table([tuple(p) for p in points])
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
    raise ValidationError(f"{where}.kind: unknown risk kind {kind!r}")


def _parse_insurer(entry: dict, upper: float, where: str) -> InsurerSpec:
    dist = _parse_loss(_require(entry, "dist", dict, where), upper, f"{where}.dist")
    risk = _parse_risk(_require(entry, "risk", dict, where), f"{where}.risk")
    return InsurerSpec(loss=dist, preference=risk)


def _parse_reinsurer(entry: dict, upper: float, n: int, where: str) -> ReinsurerSpec:
    raw_belief = entry.get("belief")
    if raw_belief is None:
        raise ValidationError(f"{where}: missing required field 'belief'")
    if isinstance(raw_belief, dict):
        beliefs = (_parse_loss(raw_belief, upper, f"{where}.belief"),)
    elif isinstance(raw_belief, list):
        if len(raw_belief) != n:
            raise ValidationError(
                f"{where}.belief: expected 1 or {n} curves, got {len(raw_belief)}"
            )
        beliefs = tuple(
            _parse_loss(b, upper, f"{where}.belief[{k}]") for k, b in enumerate(raw_belief)
        )
    else:
        raise ValidationError(f"{where}.belief: wrong type {type(raw_belief).__name__}")
    loading = float(_require(entry, "loading", (int, float), where))
    risk_neutral = bool(entry.get("risk_neutral", False))
    try:
        return ReinsurerSpec(beliefs=beliefs, loading=loading, risk_neutral=risk_neutral)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None
