"""Equilibrium construction, payoff evaluation, and deviation verification.

The constructed equilibrium is the canonical member of the admissible pricing
family: every reinsurer quotes each insurer exactly the second-lowest of that
insurer's true preferences, and insurers respond with generous best
responses.  Three pricing clauses characterize admissibility per cell:

1. the lowest quote equals the second-lowest true preference;
2. at least two candidates (counting retention when the insurer's own curve
   ties the quote) sit at that lowest price;
3. whenever some reinsurer attains the overall lowest true preference, at
   least one such reinsurer is quoting the lowest price.

Under the all-quote rule clauses 1 and 3 hold by construction and clause 2
can only fail in the monopoly case on cells where no trade happens anyway;
the construction log records all three honestly.

A reinsurer's equilibrium payoff telescopes into
``sum_i int min(tau_{i,j} - tau_bar_i, 0) dz``: it profits exactly where its
loaded belief is the unique cheapest carrier, earning the gap up to the
runner-up.  That identity is checked numerically, and sampled price
deviations (band bumps, global scalings, quote swaps, undercuts) re-solve the
affected insurers' responses to confirm no deviation improves the payoff.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .bestresponse import EPS_NUM, Regime, _classify, _gamma_from_selection, _generous
from .curves import Grid, SurvivalCurve, choquet_integral
from .errors import ReinsGameError, ValidationError
from .market import (
    Allocation,
    MarginalIndemnityMatrix,
    MarketSpec,
    PricingMatrix,
    true_preferences,
)
from .pareto import check_ir, check_po

__all__ = [
    "ConstructionLog",
    "SpneStrategy",
    "InsurerOutcome",
    "ReinsurerOutcome",
    "EquilibriumReport",
    "DeviationVerdict",
    "construct_spne",
    "reinsurer_risk",
    "equilibrium_identity_check",
    "verify_no_deviation",
    "solve_stackelberg",
    "build_report",
    "DEVIATION_FAMILIES",
]

DEVIATION_FAMILIES = ("bump", "scale", "swap", "undercut")


class ConstructionError(ReinsGameError):
    """The canonical pricing construction violated an admissibility clause on
    a positive-length cell set (cannot happen for valid markets; defensive)."""


@dataclass(frozen=True)
class ConstructionLog:
    """Per-insurer, per-cell record of the pricing clauses.

    ``clause2_ok`` can legitimately be false in a monopoly market on cells
    where the single quote exceeds the insurer's own curve; those cells carry
    no trade, so the equilibrium property is unaffected.
    """

    clause1_ok: np.ndarray
    clause2_ok: np.ndarray
    clause3_ok: np.ndarray

    def all_ok(self) -> bool:
        return bool(
            self.clause1_ok.all() and self.clause2_ok.all() and self.clause3_ok.all()
        )

    def summary(self) -> dict[str, float]:
        total = self.clause1_ok.size
        return {
            "clause1_fraction": float(self.clause1_ok.sum()) / total,
            "clause2_fraction": float(self.clause2_ok.sum()) / total,
            "clause3_fraction": float(self.clause3_ok.sum()) / total,
        }


@dataclass(frozen=True)
class SpneStrategy:
    """Constructed equilibrium: the pricing matrix, the generous responses,
    the dependence regime it was built under, and the clause log."""

    prices: PricingMatrix
    responses: MarginalIndemnityMatrix
    regime: str
    log: ConstructionLog


@dataclass(frozen=True)
class InsurerOutcome:
    initial_risk: float
    premiums: tuple[float, ...]
    premium_total: float
    post_transfer_risk: float
    welfare_gain: float


@dataclass(frozen=True)
class ReinsurerOutcome:
    post_transfer_risk: float
    welfare_gain: float
    identity_residual: float


@dataclass(frozen=True)
class EquilibriumReport:
    """All per-agent numbers behind the summary tables, plus the IR, Pareto
    and deviation flags."""

    insurers: tuple[InsurerOutcome, ...]
    reinsurers: tuple[ReinsurerOutcome, ...]
    individually_rational: bool
    pareto_optimal: bool
    deviation_check_passed: bool | None
    tau_bar_monotone: tuple[bool, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "insurers": [
                {
                    "initial_risk": o.initial_risk,
                    "premiums": list(o.premiums),
                    "premium_total": o.premium_total,
                    "post_transfer_risk": o.post_transfer_risk,
                    "welfare_gain": o.welfare_gain,
                }
                for o in self.insurers
            ],
            "reinsurers": [
                {
                    "post_transfer_risk": o.post_transfer_risk,
                    "welfare_gain": o.welfare_gain,
                    "identity_residual": o.identity_residual,
                }
                for o in self.reinsurers
            ],
            "individually_rational": self.individually_rational,
            "pareto_optimal": self.pareto_optimal,
            "deviation_check_passed": self.deviation_check_passed,
            "tau_bar_monotone": list(self.tau_bar_monotone),
        }


@dataclass(frozen=True)
class DeviationVerdict:
    """Outcome of a seeded deviation sweep for one reinsurer.  A found
    improvement is a verdict, not an error."""

    passed: bool
    worst_improvement: float
    worst_deviation: dict[str, Any] | None
    checked: int


# ---------------------------------------------------------------------------
# Internal solver context: stacked cell arrays, built once per market.


@dataclass
class _Context:
    grid: Grid
    widths: np.ndarray
    alpha: np.ndarray  # (n, cells)
    taus: np.ndarray  # (n, m+1, cells)
    tau_bar: np.ndarray  # (n, cells)


def _context(market: MarketSpec) -> _Context:
    taus = np.stack(
        [
            np.stack([c.cell_values for c in true_preferences(market, i)])
            for i in range(market.n)
        ]
    )
    tau_bar = np.sort(taus, axis=1)[:, 1, :]
    return _Context(
        grid=market.grid,
        widths=market.grid.widths,
        alpha=taus[:, 0, :],
        taus=taus,
        tau_bar=tau_bar,
    )


def _price_block(strategy: SpneStrategy, i: int) -> np.ndarray:
    return strategy.prices.row_block(i)


# ---------------------------------------------------------------------------
# Construction


def construct_spne(market: MarketSpec) -> SpneStrategy:
    """Build the canonical equilibrium: all reinsurers quote the second-lowest
    true preference of each insurer; responses are generous best responses."""
    market.require_supported("equilibrium construction")
    ctx = _context(market)
    grid = market.grid
    n, m, cells = market.n, market.m, grid.num_cells

    gamma = np.zeros((n, m, cells))
    clause1 = np.zeros((n, cells), dtype=bool)
    clause2 = np.zeros((n, cells), dtype=bool)
    clause3 = np.zeros((n, cells), dtype=bool)
    price_rows = []
    for i in range(n):
        full = np.sort(
            np.stack([c.values for c in true_preferences(market, i)]), axis=0
        )[1]
        price_rows.append(
            tuple(
                SurvivalCurve(full, label=f"nu[{i + 1},{j + 1}]") for j in range(m)
            )
        )
        block = np.tile(ctx.tau_bar[i], (m, 1))
        cls = _classify(ctx.alpha[i], block, ctx.taus[i], grid, i)
        sel = _generous(cls, grid)
        gamma[i] = _gamma_from_selection(cls, sel, m)

        clause1[i] = grid.values_close(block.min(axis=0), ctx.tau_bar[i])
        quoting = cls.minimizer_mask.sum(axis=0) + (cls.regime == Regime.INDIFFERENT)
        clause2[i] = quoting >= 2
        t_mask = cls.cheapest_true_mask
        t_any = t_mask.any(axis=0)
        clause3[i] = ~t_any | (t_mask & cls.minimizer_mask).any(axis=0)

    log = ConstructionLog(clause1, clause2, clause3)
    bad3 = ~clause3
    if bad3.any():
        width = float(grid.widths[np.unique(np.nonzero(bad3)[1])].sum())
        if width > grid.eps_ref:
            cells_bad = np.argwhere(bad3)[:20].tolist()
            raise ConstructionError(
                f"pricing clause 3 unsatisfiable on cells of total width {width:.3e}: "
                f"(insurer, cell) pairs {cells_bad}"
            )
    return SpneStrategy(
        prices=PricingMatrix(tuple(price_rows)),
        responses=MarginalIndemnityMatrix(gamma),
        regime=market.dependence,
        log=log,
    )


# ---------------------------------------------------------------------------
# Payoffs


def reinsurer_risk(market: MarketSpec, strategy: SpneStrategy, j: int) -> float:
    """Post-transfer risk of reinsurer j: its loaded valuation of everything
    it carries, net of premium income, summed across insurers (additive in
    both supported regimes)."""
    market.require_supported("reinsurer risk evaluation")
    ctx = _context(market)
    w = ctx.widths
    total = 0.0
    for i in range(market.n):
        nu = _price_block(strategy, i)[j]
        g = strategy.responses.gamma[i, j]
        total += float(np.dot((ctx.taus[i, j + 1] - nu) * w, g))
    return total


def equilibrium_identity_check(market: MarketSpec, strategy: SpneStrategy, j: int) -> float:
    """|direct payoff - telescoped form|; the telescoped form integrates
    min(tau_{i,j} - tau_bar_i, 0) independently of the responses."""
    ctx = _context(market)
    w = ctx.widths
    rhs = float(
        np.sum(np.minimum(ctx.taus[:, j + 1, :] - ctx.tau_bar, 0.0) * w[None, :])
    )
    lhs = reinsurer_risk(market, strategy, j)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Deviation verification


def verify_no_deviation(
    market: MarketSpec,
    strategy: SpneStrategy,
    j: int,
    num_deviations: int = 2000,
    seed: int = 0,
    eps: float = EPS_NUM,
    families: tuple[str, ...] = DEVIATION_FAMILIES,
) -> DeviationVerdict:
    """Sample price deviations for reinsurer j and re-solve the affected
    insurer's generous response each time.

    Default families: additive bumps on random cell bands, global scalings,
    swapping to a rival's quote, and undercutting the second-lowest true
    preference.  Deviated payoffs must never improve on the equilibrium
    payoff by more than ``eps``.
    """
    market.require_supported("deviation verification")
    if not 0 <= j < market.m:
        raise ValidationError(f"reinsurer index {j} out of range")
    if not families or any(f not in DEVIATION_FAMILIES for f in families):
        raise ValidationError(
            f"families must be a nonempty subset of {DEVIATION_FAMILIES}"
        )
    ctx = _context(market)
    w = ctx.widths
    n, m, cells = market.n, market.m, ctx.alpha.shape[1]
    rng = np.random.default_rng(seed)

    eq_contrib = np.empty(n)
    blocks = []
    for i in range(n):
        block = _price_block(strategy, i)
        blocks.append(block)
        eq_contrib[i] = float(
            np.dot((ctx.taus[i, j + 1] - block[j]) * w, strategy.responses.gamma[i, j])
        )
    eq_total = float(eq_contrib.sum())

    worst_improvement = -np.inf
    worst: dict[str, Any] | None = None

    for _ in range(num_deviations):
        i = int(rng.integers(n))
        family = families[int(rng.integers(len(families)))]
        base = blocks[i][j]
        descriptor: dict[str, Any] = {"family": family, "insurer": i}

        if family == "swap" and m == 1:
            family = "bump"
            descriptor["family"] = "bump"

        if family == "bump":
            lo, hi = _random_band(rng, cells)
            delta = float(rng.uniform(0.0, 0.5)) * max(1.0, float(base.max()))
            sign = 1.0 if rng.uniform() < 0.5 else -1.0
            nu = base.copy()
            nu[lo:hi] = np.maximum(nu[lo:hi] + sign * delta, 0.0)
            descriptor.update(band=[int(lo), int(hi)], delta=sign * delta)
        elif family == "scale":
            factor = float(rng.uniform(0.25, 1.75))
            nu = base * factor
            descriptor.update(factor=factor)
        elif family == "swap":
            rival = int(rng.integers(m - 1))
            rival = rival + 1 if rival >= j else rival
            nu = blocks[i][rival].copy()
            descriptor.update(rival=rival)
        else:  # undercut
            delta = float(rng.uniform(1e-6, 0.2))
            nu = np.maximum(ctx.tau_bar[i] - delta, 0.0)
            if rng.uniform() < 0.5:
                lo, hi = _random_band(rng, cells)
                full = base.copy()
                full[lo:hi] = nu[lo:hi]
                nu = full
                descriptor.update(band=[int(lo), int(hi)])
            descriptor.update(delta=delta)

        block = blocks[i].copy()
        block[j] = nu
        cls = _classify(ctx.alpha[i], block, ctx.taus[i], ctx.grid, i)
        sel = _generous(cls, ctx.grid)
        gamma_i = _gamma_from_selection(cls, sel, m)
        dev_contrib = float(np.dot((ctx.taus[i, j + 1] - nu) * w, gamma_i[j]))
        improvement = eq_contrib[i] - dev_contrib
        if improvement > worst_improvement:
            worst_improvement = improvement
            worst = descriptor

    return DeviationVerdict(
        passed=bool(worst_improvement <= eps),
        worst_improvement=float(worst_improvement),
        worst_deviation=worst,
        checked=num_deviations,
    )


def _random_band(rng: np.random.Generator, cells: int) -> tuple[int, int]:
    lo = int(rng.integers(cells))
    hi = int(rng.integers(lo + 1, cells + 1))
    return lo, hi


# ---------------------------------------------------------------------------
# Reports


def solve_stackelberg(
    market: MarketSpec, deviation_sweeps: int = 0, seed: int = 0
) -> tuple[SpneStrategy, EquilibriumReport]:
    """Monopoly special case: with a single reinsurer the constructed quote
    equals the insurer's own curve wherever trade happens, so every insurer
    is exactly indifferent and the reinsurer absorbs the entire surplus."""
    if market.m != 1:
        raise ValidationError(
            f"the monopoly solver needs exactly one reinsurer, market has {market.m}"
        )
    strategy = construct_spne(market)
    report = build_report(market, strategy, deviation_sweeps=deviation_sweeps, seed=seed)
    return strategy, report


def build_report(
    market: MarketSpec,
    strategy: SpneStrategy,
    deviation_sweeps: int = 0,
    seed: int = 0,
) -> EquilibriumReport:
    """Assemble per-agent risk levels, premia, welfare gains and flags."""
    grid = market.grid
    w = grid.widths
    gamma = strategy.responses.gamma

    premia = np.empty((market.n, market.m))
    insurers = []
    for i in range(market.n):
        block = _price_block(strategy, i)
        premia[i] = np.einsum("jk,jk,k->j", block, gamma[i], w)
        initial = choquet_integral(market.alpha[i], grid)
        cover = float(np.dot(market.alpha[i].cell_values * w, gamma[i].sum(axis=0)))
        post = initial - cover + float(premia[i].sum())
        insurers.append(
            InsurerOutcome(
                initial_risk=initial,
                premiums=tuple(float(p) for p in premia[i]),
                premium_total=float(premia[i].sum()),
                post_transfer_risk=post,
                welfare_gain=initial - post,
            )
        )

    reinsurers = []
    deviation_flag: bool | None = None
    for j in range(market.m):
        risk = reinsurer_risk(market, strategy, j)
        residual = equilibrium_identity_check(market, strategy, j)
        reinsurers.append(
            ReinsurerOutcome(
                post_transfer_risk=risk,
                welfare_gain=-risk,
                identity_residual=residual,
            )
        )
    if deviation_sweeps > 0:
        deviation_flag = all(
            verify_no_deviation(
                market, strategy, j, num_deviations=deviation_sweeps, seed=seed + j
            ).passed
            for j in range(market.m)
        )

    allocation = Allocation(indemnities=strategy.responses, premia=premia)
    margins = check_ir(market, allocation)
    certificate = check_po(market, allocation)
    tau_bar_monotone = tuple(
        SurvivalCurve(
            np.sort(
                np.stack([c.values for c in true_preferences(market, i)]), axis=0
            )[1]
        ).is_nonincreasing(grid)
        for i in range(market.n)
    )
    return EquilibriumReport(
        insurers=tuple(insurers),
        reinsurers=tuple(reinsurers),
        individually_rational=margins.ok(),
        pareto_optimal=certificate.pareto_optimal,
        deviation_check_passed=deviation_flag,
        tau_bar_monotone=tau_bar_monotone,
    )
