"""Solver for sequential reinsurance-market games under Choquet risk measures.

Insurers with distortion preferences buy coverage from reinsurers who move
first by quoting Choquet premium principles.  The package computes insurer
best responses through marginal indemnities, constructs the equilibrium in
which every reinsurer quotes the second-lowest true preference, verifies
individual rationality and Pareto optimality, and exposes a CLI that
reproduces the reference monopoly and duopoly markets.
"""

from .bestresponse import (
    EPS_NUM,
    CellClassification,
    GenerousSelection,
    Regime,
    best_response,
    classify_cells,
    generous_distribution,
    insurer_risk,
)
from .curves import (
    DistortionSpec,
    Grid,
    LossModel,
    NonMonotoneCurveWarning,
    PiecewiseExpCurve,
    SurvivalCurve,
    choquet_integral,
    distort,
    es_exponential,
    kth_lowest,
    refine_crossings,
    scale,
)
from .equilibrium import (
    DeviationVerdict,
    EquilibriumReport,
    SpneStrategy,
    build_report,
    construct_spne,
    equilibrium_identity_check,
    reinsurer_risk,
    solve_stackelberg,
    verify_no_deviation,
)
from .errors import (
    GridMismatchError,
    InfeasibleError,
    NumericalError,
    ReinsGameError,
    UnsupportedRegimeError,
    ValidationError,
)
from .market import (
    Allocation,
    IndemnityFunction,
    InsurerSpec,
    MarginalIndemnityMatrix,
    MarketSpec,
    PricingMatrix,
    ReinsurerSpec,
    flatten_incremental,
    indemnity_from_marginal,
    indemnity_profile,
    load_market,
    second_lowest_preference,
    true_preferences,
)
from .pareto import (
    IrMargins,
    PoCertificate,
    aggregate_risk,
    check_ir,
    check_po,
    po_oracle,
    premium_feasibility,
)

__version__ = "0.1.0"
