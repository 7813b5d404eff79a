"""Insurer best responses to a pricing matrix.

With prices fixed, each insurer's problem separates across grid cells: cede
the marginal slice of the tail at z whenever the cheapest quote undercuts the
insurer's own distorted curve, retain it when every quote exceeds it, and on
ties pick among the tied cheapest providers.  The canonical tie-break is the
generous rule: among candidates tied at the lowest price (retention counts as
a candidate priced at the insurer's own curve), all weight goes to the one
with strictly smallest true preference, so surplus lands where it is cheapest
to carry.  Remaining ties are resolved deterministically, lowest reinsurer
index first and retention last.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .curves import Grid, choquet_integral
from .errors import ValidationError
from .market import MarketSpec, PricingMatrix, true_preferences

__all__ = [
    "Regime",
    "CellClassification",
    "GenerousSelection",
    "classify_cells",
    "generous_distribution",
    "best_response",
    "insurer_risk",
    "TIE_RULES",
    "EPS_NUM",
]

#: Payoff-comparison tolerance at the default grid resolution; quadrature
#: noise sits orders of magnitude below this.
EPS_NUM = 1e-7

#: Selection policies for cells where the lowest quote ties the insurer's own
#: curve: "generous" applies the minimal-true-preference rule, "retain" keeps
#: every tied cell (a valid but non-generous optimum, useful as a foil).
TIE_RULES = ("generous", "retain")


class Regime(IntEnum):
    RETAIN = -1
    INDIFFERENT = 0
    BUY = 1


@dataclass(frozen=True)
class CellClassification:
    """Cellwise regime data for one insurer against a pricing matrix.

    ``true_pref`` stacks tau_{i,k} for k = 0..m (row 0 is the insurer's own
    curve); ``global_min_mask`` marks, per cell, which of those attain the
    minimum over all m+1 of them; its reinsurer rows are the cheapest-true
    set used by the equilibrium pricing clauses.
    """

    insurer: int
    lowest_price: np.ndarray
    minimizer_mask: np.ndarray
    regime: np.ndarray
    true_pref: np.ndarray
    global_min_mask: np.ndarray

    @property
    def cheapest_true_mask(self) -> np.ndarray:
        """Reinsurers attaining the global minimum true preference."""
        return self.global_min_mask[1:]


@dataclass(frozen=True)
class GenerousSelection:
    """Per-cell recipient of the marginal unit: 0 retains, j >= 1 cedes to
    reinsurer j.  ``ceded`` is the total marginal weight placed with
    reinsurers on each cell."""

    recipient: np.ndarray
    ceded: np.ndarray


def _classify(
    alpha: np.ndarray, prices: np.ndarray, taus: np.ndarray, grid: Grid, insurer: int
) -> CellClassification:
    mu = prices.min(axis=0)
    minimizer_mask = grid.values_close(prices, mu[None, :])
    tie = grid.values_close(alpha, mu)
    regime = np.where(tie, Regime.INDIFFERENT, np.where(alpha > mu, Regime.BUY, Regime.RETAIN))
    tmin = taus.min(axis=0)
    global_min_mask = grid.values_close(taus, tmin[None, :])
    return CellClassification(
        insurer=insurer,
        lowest_price=mu,
        minimizer_mask=minimizer_mask,
        regime=regime.astype(np.int8),
        true_pref=taus,
        global_min_mask=global_min_mask,
    )


def classify_cells(market: MarketSpec, prices: PricingMatrix, i: int) -> CellClassification:
    """Compute, for every cell: the lowest quote, the set of reinsurers
    attaining it, the buy/indifferent/retain regime of insurer i, and the
    global true-preference minimizers."""
    if prices.n != market.n or prices.m != market.m:
        raise ValidationError(
            f"pricing matrix is {prices.n}x{prices.m}, market is {market.n}x{market.m}"
        )
    prices.validate_on(market.grid)
    taus = np.stack([c.cell_values for c in true_preferences(market, i)])
    block = prices.row_block(i)
    return _classify(market.alpha[i].cell_values, block, taus, market.grid, i)


def _generous(classification: CellClassification, grid: Grid) -> GenerousSelection:
    regime = classification.regime
    taus = classification.true_pref
    cells = regime.shape[0]

    # Candidates tied at the lowest price; retention joins only on ties.
    cand = np.vstack([regime == Regime.INDIFFERENT, classification.minimizer_mask])
    tau_cand = np.where(cand, taus, np.inf)
    cmin = tau_cand.min(axis=0)
    keep = cand & grid.values_close(tau_cand, cmin[None, :]) & np.isfinite(tau_cand)

    rkeep = keep[1:]
    has_reinsurer = rkeep.any(axis=0)
    first = rkeep.argmax(axis=0) + 1
    recipient = np.where(has_reinsurer, first, 0)
    recipient[regime == Regime.RETAIN] = 0

    ceded = np.zeros(cells)
    ceded[(recipient > 0) & (regime != Regime.RETAIN)] = 1.0
    return GenerousSelection(recipient=recipient, ceded=ceded)


def generous_distribution(classification: CellClassification, grid: Grid) -> GenerousSelection:
    """Apply the generous tie-break: among price-tied candidates, exclude any
    with a strictly larger true preference than another tied candidate;
    remaining ties go to the lowest reinsurer index, retention last."""
    return _generous(classification, grid)


def _gamma_from_selection(
    classification: CellClassification, selection: GenerousSelection, m: int
) -> np.ndarray:
    cells = classification.regime.shape[0]
    gamma = np.zeros((m, cells))
    sel = (classification.regime != Regime.RETAIN) & (selection.recipient > 0)
    cols = np.nonzero(sel)[0]
    gamma[selection.recipient[cols] - 1, cols] = 1.0
    return gamma


def best_response(
    market: MarketSpec, prices: PricingMatrix, i: int, tie_rule: str = "generous"
) -> np.ndarray:
    """Optimal marginal indemnities gamma_{ij}(z) for insurer i, shape
    (m, cells).

    Weight is confined to the lowest-price reinsurers; cell totals are 1 on
    buy cells, 0 on retain cells, and set by the tie rule on indifferent
    cells.
    """
    if tie_rule not in TIE_RULES:
        raise ValidationError(f"tie_rule must be one of {TIE_RULES}, got {tie_rule!r}")
    classification = classify_cells(market, prices, i)
    selection = _generous(classification, market.grid)
    gamma = _gamma_from_selection(classification, selection, market.m)
    if tie_rule == "retain":
        gamma[:, classification.regime == Regime.INDIFFERENT] = 0.0
    return gamma


def insurer_risk(
    market: MarketSpec, prices: PricingMatrix, gamma_row: np.ndarray, i: int
) -> float:
    """Post-transfer risk level of insurer i under the given marginal
    indemnities: initial risk, minus the distorted value of the total cover,
    plus the quoted premia."""
    gamma_row = np.asarray(gamma_row, dtype=float)
    grid = market.grid
    if gamma_row.shape != (market.m, grid.num_cells):
        raise ValidationError(
            f"gamma row has shape {gamma_row.shape}, expected "
            f"({market.m}, {grid.num_cells})"
        )
    initial = choquet_integral(market.alpha[i], grid)
    alpha = market.alpha[i].cell_values
    block = prices.row_block(i)
    w = grid.widths
    cover = float(np.dot(alpha * w, gamma_row.sum(axis=0)))
    premia = float(np.einsum("jk,jk,k->", block, gamma_row, w))
    return initial - cover + premia
