"""Individual rationality, the Pareto support condition, the aggregate-risk
oracle, and the premium feasibility system."""

import math

import numpy as np
import pytest

from reinsgame import (
    Allocation,
    InfeasibleError,
    MarginalIndemnityMatrix,
    UnsupportedRegimeError,
    ValidationError,
    aggregate_risk,
    build_report,
    check_ir,
    check_po,
    choquet_integral,
    construct_spne,
    po_oracle,
    premium_feasibility,
    true_preferences,
)
from helpers import random_admissible_rows, random_market

M = 5.0


def zero_allocation(market) -> Allocation:
    gamma = np.zeros((market.n, market.m, market.grid.num_cells))
    return Allocation(
        indemnities=MarginalIndemnityMatrix(gamma),
        premia=np.zeros((market.n, market.m)),
    )


def equilibrium_allocation(market):
    strategy = construct_spne(market)
    report = build_report(market, strategy)
    premia = np.array([list(o.premiums) for o in report.insurers])
    return Allocation(indemnities=strategy.responses, premia=premia), report


# ---------------------------------------------------------------------------
# individual rationality


def test_zero_allocation_ir_with_equality(stackelberg_market):
    margins = check_ir(stackelberg_market, zero_allocation(stackelberg_market))
    assert np.all(margins.insurers == 0.0)
    assert np.all(margins.reinsurers == 0.0)
    assert margins.ok()


def test_stackelberg_margins(stackelberg_market):
    allocation, _ = equilibrium_allocation(stackelberg_market)
    margins = check_ir(stackelberg_market, allocation)
    np.testing.assert_allclose(margins.insurers, 0.0, atol=1e-9)
    assert margins.reinsurers[0] == pytest.approx(2.933441, abs=5e-5)


def test_duopoly_margins(duopoly_market):
    allocation, _ = equilibrium_allocation(duopoly_market)
    margins = check_ir(duopoly_market, allocation)
    np.testing.assert_allclose(
        margins.insurers, [0.555094, 0.784479, 1.320426], atol=5e-4
    )
    np.testing.assert_allclose(margins.reinsurers, [0.273442, 0.000993], atol=5e-4)


# ---------------------------------------------------------------------------
# Pareto support condition


def test_full_retention_po_when_own_curve_cheapest():
    # Loaded beliefs sit above the insurer's curve everywhere, so retention
    # is the unique minimizer and the zero allocation is Pareto optimal.
    from reinsgame import DistortionSpec, InsurerSpec, LossModel, MarketSpec, ReinsurerSpec

    market = MarketSpec.assemble(
        insurers=[
            InsurerSpec(
                loss=LossModel.censored_exponential(3.0, M),
                preference=DistortionSpec.expected_shortfall(0.5),
            )
        ],
        reinsurers=[
            ReinsurerSpec(
                beliefs=(LossModel.censored_exponential(0.1, M),),
                loading=0.5,
                risk_neutral=True,
            )
        ],
        upper_bound=M,
        grid_cells=2000,
        dependence="risk-neutral-reinsurers",
    )
    certificate = check_po(market, zero_allocation(market))
    assert certificate.support_ok
    assert certificate.pareto_optimal
    assert np.all(certificate.minimizer_mask[0, 0])


def test_equilibrium_allocations_are_po(stackelberg_market, duopoly_market):
    for market in (stackelberg_market, duopoly_market):
        allocation, _ = equilibrium_allocation(market)
        certificate = check_po(market, allocation)
        assert certificate.support_ok
        assert certificate.pareto_optimal


def test_dominated_mass_fails_po(duopoly_market):
    # Shift insurer 1's early-band cover from the cheap reinsurer 2 to the
    # dominated reinsurer 1: the support condition must fail.
    market = duopoly_market
    allocation, _ = equilibrium_allocation(market)
    gamma = allocation.indemnities.gamma.copy()
    mid = 0.5 * (market.grid.nodes[:-1] + market.grid.nodes[1:])
    band = (mid > 0.05) & (mid < 0.085)
    gamma[0, 0, band] = 1.0
    gamma[0, 1, band] = 0.0
    tampered = Allocation(
        indemnities=MarginalIndemnityMatrix(gamma), premia=allocation.premia
    )
    certificate = check_po(market, tampered)
    assert not certificate.support_ok
    assert not certificate.pareto_optimal


def test_ir_failure_blocks_po(duopoly_market):
    allocation, _ = equilibrium_allocation(duopoly_market)
    premia = allocation.premia.copy()
    premia[0, 0] += 10.0  # way past insurer 1's slack
    greedy = Allocation(indemnities=allocation.indemnities, premia=premia)
    certificate = check_po(duopoly_market, greedy)
    assert certificate.support_ok  # indemnities untouched
    assert not certificate.ir_margins.ok()
    assert not certificate.pareto_optimal


def test_po_requires_supported_regime():
    rng = np.random.default_rng(0)
    market = random_market(rng, n=1, m=1, cells=400)
    general = market.__class__.assemble(
        insurers=list(market.insurers),
        reinsurers=[
            type(r)(beliefs=r.beliefs, loading=r.loading, risk_neutral=False)
            for r in market.reinsurers
        ],
        upper_bound=market.upper_bound,
        grid_cells=400,
        dependence="general",
    )
    with pytest.raises(UnsupportedRegimeError):
        check_po(general, zero_allocation(general))


# ---------------------------------------------------------------------------
# aggregate risk and the oracle


def test_zero_gamma_aggregate_is_sum_of_initial_risks(stackelberg_market):
    market = stackelberg_market
    gamma = np.zeros((market.n, market.m, market.grid.num_cells))
    total = aggregate_risk(market, gamma)
    expected = sum(
        choquet_integral(market.alpha[i], market.grid) for i in range(market.n)
    )
    assert total == pytest.approx(expected, abs=1e-12)
    assert total == pytest.approx(4.301150, abs=5e-5)


def test_po_oracle_monopoly_band(stackelberg_market):
    market = stackelberg_market
    oracle = po_oracle(market)
    grid = market.grid
    lo = math.log(1.15) / 2.5
    hi = 2.0 * (math.log(10.0) - math.log(1.15))
    mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    margin = 1e-3
    inside = (mid > lo + margin) & (mid < hi - margin)
    outside = (mid < lo - margin) | (mid > hi + margin)
    assert np.all(oracle.gamma[0, 0, inside] == 1.0)
    assert np.all(oracle.gamma[0, 0, outside] == 0.0)


def test_po_oracle_starves_dominated_reinsurer():
    from reinsgame import DistortionSpec, InsurerSpec, LossModel, MarketSpec, ReinsurerSpec

    market = MarketSpec.assemble(
        insurers=[
            InsurerSpec(
                loss=LossModel.censored_exponential(3.0, M),
                preference=DistortionSpec.expected_shortfall(0.10),
            )
        ],
        reinsurers=[
            ReinsurerSpec(
                beliefs=(LossModel.censored_exponential(2.5, M),),
                loading=0.15,
                risk_neutral=True,
            ),
            ReinsurerSpec(
                beliefs=(LossModel.censored_exponential(2.0, M),),
                loading=5.0,  # tau2 = 6 e^{-2z}: above everything
                risk_neutral=True,
            ),
        ],
        upper_bound=M,
        grid_cells=4000,
        dependence="risk-neutral-reinsurers",
    )
    oracle = po_oracle(market)
    assert np.all(oracle.gamma[0, 1] == 0.0)


def test_oracle_beats_random_allocations(duopoly_market):
    market = duopoly_market
    oracle_value = aggregate_risk(market, po_oracle(market))
    rng = np.random.default_rng(99)
    cells = market.grid.num_cells
    for _ in range(40):
        gamma = np.stack(
            [random_admissible_rows(rng, 1, market.m, cells)[0] for _ in range(market.n)]
        )
        assert aggregate_risk(market, gamma) >= oracle_value - 1e-7


def test_oracle_beats_thousand_random_matrices():
    # Same global-minimality property, swept over 1000 admissible matrices on
    # a smaller market so the sweep stays cheap.
    rng = np.random.default_rng(41)
    market = random_market(rng, n=2, m=2, cells=500)
    oracle_value = aggregate_risk(market, po_oracle(market))
    cells = market.grid.num_cells
    for _ in range(1000):
        gamma = np.stack(
            [random_admissible_rows(rng, 1, market.m, cells)[0] for _ in range(market.n)]
        )
        assert aggregate_risk(market, gamma) >= oracle_value - 1e-7


def test_oracle_allocation_passes_check_po():
    rng = np.random.default_rng(7)
    for _ in range(5):
        market = random_market(rng, cells=900)
        oracle = po_oracle(market)
        w = market.grid.widths
        # IR-compatible targets: insurers pay their full valuation of the
        # cover, reinsurers split the surplus evenly.
        a = np.empty(market.n)
        costs = np.zeros(market.m)
        for i in range(market.n):
            taus = np.stack([c.cell_values for c in true_preferences(market, i)])
            a[i] = float(np.dot(taus[0] * w, oracle.gamma[i].sum(axis=0)))
            costs += np.einsum("jk,jk,k->j", taus[1:], oracle.gamma[i], w)
        surplus = float(a.sum() - costs.sum())
        assert surplus >= -1e-9
        b = costs + surplus / market.m
        premia = premium_feasibility(market, a, b)
        allocation = Allocation(indemnities=oracle, premia=premia)
        certificate = check_po(market, allocation)
        assert certificate.support_ok
        assert certificate.pareto_optimal
        assert aggregate_risk(market, oracle) <= certificate.aggregate_risk + 1e-9


def test_po_verdict_tracks_aggregate_criterion():
    # Positive and mutated-negative cases: the support verdict must agree
    # with "aggregate risk within tolerance of the oracle minimum".
    rng = np.random.default_rng(31)
    for _ in range(5):
        market = random_market(rng, n=2, m=2, cells=700)
        oracle = po_oracle(market)
        oracle_value = aggregate_risk(market, oracle)
        allocation = Allocation(
            indemnities=oracle, premia=np.zeros((market.n, market.m))
        )
        cert = check_po(market, allocation)
        assert cert.support_ok
        assert abs(cert.aggregate_risk - oracle_value) <= 1e-9

        # mutate: move clearly-suboptimal mass onto the worst carrier
        gamma = oracle.gamma.copy()
        taus = np.stack([c.cell_values for c in true_preferences(market, 0)])
        worst = int(np.argmax(taus[1:].sum(axis=1)))
        gap = taus[1 + worst] - taus.min(axis=0)
        band = gap > 0.05
        if band.sum() < 5:
            continue
        gamma[0, :, band] = 0.0
        gamma[0, worst, band] = 1.0
        mutated = Allocation(
            indemnities=MarginalIndemnityMatrix(gamma),
            premia=np.zeros((market.n, market.m)),
        )
        cert_bad = check_po(market, mutated)
        assert not cert_bad.support_ok
        assert cert_bad.aggregate_risk > oracle_value + 1e-7


def test_aggregate_risk_ignores_premia(duopoly_market):
    allocation, _ = equilibrium_allocation(duopoly_market)
    shifted = Allocation(
        indemnities=allocation.indemnities, premia=allocation.premia + 3.0
    )
    assert aggregate_risk(duopoly_market, allocation.indemnities) == aggregate_risk(
        duopoly_market, shifted.indemnities
    )
    assert check_po(duopoly_market, allocation).support_ok
    assert check_po(duopoly_market, shifted).support_ok


# ---------------------------------------------------------------------------
# premium feasibility


def test_premium_single_pair(stackelberg_market):
    market = stackelberg_market  # n=3, m=1: unique solution is pi_i1 = a_i
    a = np.array([1.0, 2.0, 0.5])
    pi = premium_feasibility(market, a, np.array([3.5]))
    np.testing.assert_allclose(pi[:, 0], a, atol=1e-12)


def test_premium_minimum_norm_two_by_two(duopoly_market):
    # For row sums (3, 1) and column sums (2, 2) the minimum-norm solution,
    # from the closed form a_i/m + b_j/n - S/(n*m), is [[1.5, 1.5], [0.5,
    # 0.5]]; any other solution is base + t*[[1,-1],[-1,1]] with larger norm.
    a = np.array([3.0, 1.0])
    b = np.array([2.0, 2.0])
    # closed form for the minimum-norm solution of the transportation system
    expected = a[:, None] / 2 + b[None, :] / 2 - a.sum() / 4
    np.testing.assert_allclose(expected, [[1.5, 1.5], [0.5, 0.5]], atol=1e-15)

    class Dims:
        n, m = 2, 2

    pi = premium_feasibility(Dims(), a, b)
    np.testing.assert_allclose(pi, expected, atol=1e-9)
    np.testing.assert_allclose(pi.sum(axis=1), a, atol=1e-9)
    np.testing.assert_allclose(pi.sum(axis=0), b, atol=1e-9)
    null_direction = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert abs(float((pi * null_direction).sum())) <= 1e-9  # min-norm optimality


def test_premium_infeasible_targets(stackelberg_market):
    with pytest.raises(InfeasibleError, match="inconsistent"):
        premium_feasibility(
            stackelberg_market, np.array([1.0, 1.0, 1.0]), np.array([2.0])
        )


def test_premium_shape_validation(stackelberg_market):
    with pytest.raises(ValidationError):
        premium_feasibility(stackelberg_market, np.array([1.0]), np.array([1.0]))


def test_premium_random_balanced_targets(duopoly_market):
    rng = np.random.default_rng(3)
    market = duopoly_market
    for _ in range(20):
        a = rng.normal(size=market.n)
        b = rng.normal(size=market.m)
        b += (a.sum() - b.sum()) / market.m
        pi = premium_feasibility(market, a, b)
        np.testing.assert_allclose(pi.sum(axis=1), a, atol=1e-9)
        np.testing.assert_allclose(pi.sum(axis=0), b, atol=1e-9)
