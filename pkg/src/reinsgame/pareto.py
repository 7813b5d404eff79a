"""Individual rationality and Pareto optimality of allocations.

Because all preferences are translation invariant, premia cancel out of any
aggregate comparison: an allocation is Pareto optimal exactly when its
indemnities minimize the aggregate post-transfer risk and its premia keep
every agent weakly better off than the status quo.  Minimizing the aggregate
separates cell by cell into picking, for each insurer and each tail slice,
the carrier (one of the reinsurers, or the insurer itself) with the lowest
true preference; that cellwise argmin is the oracle every check here reduces
to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bestresponse import EPS_NUM
from .curves import choquet_integral
from .errors import InfeasibleError, ValidationError
from .market import Allocation, MarginalIndemnityMatrix, MarketSpec, true_preferences

__all__ = [
    "IrMargins",
    "PoCertificate",
    "check_ir",
    "check_po",
    "aggregate_risk",
    "po_oracle",
    "premium_feasibility",
]


@dataclass(frozen=True)
class IrMargins:
    """Participation slack per agent: how much each risk level improves on
    the status quo.  Nonnegative margins (up to tolerance) mean the
    allocation is individually rational."""

    insurers: np.ndarray
    reinsurers: np.ndarray

    def ok(self, eps: float = EPS_NUM) -> bool:
        return bool(
            np.all(self.insurers >= -eps) and np.all(self.reinsurers >= -eps)
        )

    def worst(self) -> float:
        return float(min(self.insurers.min(), self.reinsurers.min()))


@dataclass(frozen=True)
class PoCertificate:
    """Support-condition certificate for Pareto optimality.

    ``minimizer_mask[i, k, cell]`` marks the carriers k in {0..m} (0 is
    retention) attaining the lowest true preference for insurer i on that
    cell; ``support_ok`` holds when all marginal weight is confined to those
    carriers on every cell.  The overall verdict also requires individual
    rationality.
    """

    support_ok: bool
    support_violation: float
    minimizer_mask: np.ndarray
    ir_margins: IrMargins
    aggregate_risk: float

    @property
    def pareto_optimal(self) -> bool:
        return self.support_ok and self.ir_margins.ok()


def _gamma_of(allocation_or_matrix) -> np.ndarray:
    if isinstance(allocation_or_matrix, Allocation):
        return allocation_or_matrix.indemnities.gamma
    if isinstance(allocation_or_matrix, MarginalIndemnityMatrix):
        return allocation_or_matrix.gamma
    return np.asarray(allocation_or_matrix, dtype=float)


def _tau_block(market: MarketSpec, i: int) -> np.ndarray:
    return np.stack([c.cell_values for c in true_preferences(market, i)])


def check_ir(market: MarketSpec, allocation: Allocation) -> IrMargins:
    """Participation margins of every agent under the allocation.

    Insurer i gains the distorted value of its total cover net of premia;
    reinsurer j gains premia net of its loaded valuation of the contracts it
    carries.
    """
    market.require_supported("individual-rationality evaluation")
    gamma = allocation.indemnities.gamma
    _check_dims(market, gamma)
    w = market.grid.widths
    n, m = market.n, market.m
    ins = np.empty(n)
    re = np.zeros(m)
    for i in range(n):
        taus = _tau_block(market, i)
        cover = float(np.dot(taus[0] * w, gamma[i].sum(axis=0)))
        ins[i] = cover - float(allocation.premia[i].sum())
        re += allocation.premia[i] - np.einsum("jk,jk,k->j", taus[1:], gamma[i], w)
    return IrMargins(insurers=ins, reinsurers=re)


def check_po(market: MarketSpec, allocation: Allocation, eps: float = EPS_NUM) -> PoCertificate:
    """Verify the Pareto support condition cellwise and combine with IR.

    On almost every cell the marginal weight must sit entirely on the
    lowest-true-preference carriers: zero mass on dominated reinsurers, and
    full cession whenever retention is not among the minimizers.
    """
    market.require_supported("Pareto-optimality evaluation")
    gamma = allocation.indemnities.gamma
    _check_dims(market, gamma)
    grid = market.grid
    n, m = market.n, market.m
    masks = np.empty((n, m + 1, grid.num_cells), dtype=bool)
    violation = 0.0
    for i in range(n):
        taus = _tau_block(market, i)
        tmin = taus.min(axis=0)
        mask = grid.values_close(taus, tmin[None, :])
        masks[i] = mask
        misplaced = np.where(~mask[1:], gamma[i], 0.0).sum(axis=0)
        deficit = np.where(~mask[0], np.abs(1.0 - gamma[i].sum(axis=0)), 0.0)
        violation = max(violation, float(misplaced.max()), float(deficit.max()))
    margins = check_ir(market, allocation)
    return PoCertificate(
        support_ok=violation <= eps,
        support_violation=violation,
        minimizer_mask=masks,
        ir_margins=margins,
        aggregate_risk=aggregate_risk(market, allocation.indemnities),
    )


def aggregate_risk(market: MarketSpec, gamma) -> float:
    """Total post-transfer risk across all agents, premia excluded (they
    cancel): sum_i rho_i(X_i) + sum_{i,j} int (tau_{i,j} - alpha_i) gamma_ij."""
    market.require_supported("aggregate-risk evaluation")
    g = _gamma_of(gamma)
    _check_dims(market, g)
    w = market.grid.widths
    total = 0.0
    for i in range(market.n):
        taus = _tau_block(market, i)
        total += choquet_integral(market.alpha[i], market.grid)
        total += float(np.einsum("jk,jk,k->", taus[1:] - taus[0][None, :], g[i], w))
    return total


def po_oracle(market: MarketSpec) -> MarginalIndemnityMatrix:
    """Global minimizer of the aggregate risk: on each cell, full marginal
    weight to the first carrier attaining the lowest true preference
    (retention included, ties to the lowest index)."""
    market.require_supported("Pareto oracle")
    cells = market.grid.num_cells
    gamma = np.zeros((market.n, market.m, cells))
    for i in range(market.n):
        taus = _tau_block(market, i)
        winner = taus.argmin(axis=0)
        cols = np.nonzero(winner > 0)[0]
        gamma[i, winner[cols] - 1, cols] = 1.0
    return MarginalIndemnityMatrix(gamma)


def premium_feasibility(
    market: MarketSpec,
    insurer_targets,
    reinsurer_targets,
    eps: float = EPS_NUM,
) -> np.ndarray:
    """Solve sum_j pi_ij = a_i, sum_i pi_ij = b_j for the premium matrix.

    The system has n + m - 1 independent equations in n*m unknowns, so it is
    solvable whenever the targets balance; the minimum-norm solution is
    returned for determinism.
    """
    a = np.asarray(insurer_targets, dtype=float)
    b = np.asarray(reinsurer_targets, dtype=float)
    n, m = market.n, market.m
    if a.shape != (n,) or b.shape != (m,):
        raise ValidationError(
            f"targets must have shapes ({n},) and ({m},), got {a.shape} and {b.shape}"
        )
    gap = float(a.sum() - b.sum())
    tol = eps * max(1.0, float(np.abs(a).sum()), float(np.abs(b).sum()))
    if abs(gap) > tol:
        raise InfeasibleError(
            f"premium targets are inconsistent: sum(a) - sum(b) = {gap:.3e}"
        )
    rows = []
    rhs = []
    for i in range(n):
        row = np.zeros((n, m))
        row[i, :] = 1.0
        rows.append(row.ravel())
        rhs.append(a[i])
    for j in range(m):
        col = np.zeros((n, m))
        col[:, j] = 1.0
        rows.append(col.ravel())
        rhs.append(b[j])
    system = np.vstack(rows)
    solution, *_ = np.linalg.lstsq(system, np.asarray(rhs), rcond=None)
    pi = solution.reshape(n, m)
    residual = float(
        max(
            np.abs(pi.sum(axis=1) - a).max(),
            np.abs(pi.sum(axis=0) - b).max(),
        )
    )
    if residual > tol:
        raise InfeasibleError(f"premium system residual {residual:.3e} exceeds {tol:.3e}")
    return pi


def _check_dims(market: MarketSpec, gamma: np.ndarray) -> None:
    expected = (market.n, market.m, market.grid.num_cells)
    if gamma.shape != expected:
        raise ValidationError(f"gamma has shape {gamma.shape}, expected {expected}")
