"""Shared test utilities: independent quadrature oracles and random-instance
builders.  Everything here is deliberately dumb and separate from the library
code paths it checks."""

from __future__ import annotations

import numpy as np

from reinsgame import (
    DistortionSpec,
    InsurerSpec,
    LossModel,
    MarketSpec,
    ReinsurerSpec,
)


def midpoint_quadrature(fn, lo: float, hi: float, n: int = 400_000) -> float:
    """Plain midpoint rule on a dense uniform grid; fn must be vectorized."""
    z = np.linspace(lo, hi, n + 1)
    mid = 0.5 * (z[:-1] + z[1:])
    return float(fn(mid).sum() * (hi - lo) / n)


def random_market(
    rng: np.random.Generator,
    n: int | None = None,
    m: int | None = None,
    cells: int = 1500,
    upper: float = 5.0,
) -> MarketSpec:
    """Random risk-neutral market with censored-exponential losses and
    beliefs; sizes default to n <= 4, m <= 3."""
    n = int(rng.integers(1, 5)) if n is None else n
    m = int(rng.integers(1, 4)) if m is None else m
    insurers = [
        InsurerSpec(
            loss=LossModel.censored_exponential(float(rng.uniform(0.5, 4.0)), upper),
            preference=DistortionSpec.expected_shortfall(float(rng.uniform(0.02, 0.6))),
        )
        for _ in range(n)
    ]
    reinsurers = [
        ReinsurerSpec(
            beliefs=(
                LossModel.censored_exponential(float(rng.uniform(0.4, 4.0)), upper),
            ),
            loading=float(rng.uniform(0.02, 0.5)),
            risk_neutral=True,
        )
        for _ in range(m)
    ]
    return MarketSpec.assemble(
        insurers, reinsurers, upper, cells, "risk-neutral-reinsurers"
    )


def random_admissible_rows(
    rng: np.random.Generator, count: int, m: int, cells: int
) -> np.ndarray:
    """Random marginal rows with entries in [0, 1] and column sums <= 1,
    drawn by cellwise rejection."""
    out = np.empty((count, m, cells))
    for d in range(count):
        gamma = rng.uniform(0.0, 1.0, size=(m, cells))
        bad = gamma.sum(axis=0) > 1.0
        while bad.any():
            gamma[:, bad] = rng.uniform(0.0, 1.0, size=(m, int(bad.sum())))
            bad = gamma.sum(axis=0) > 1.0
        out[d] = gamma
    return out
