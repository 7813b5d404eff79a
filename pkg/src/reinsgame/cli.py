"""Command-line front end.

Commands: ``solve-spne`` and ``solve-stackelberg`` load a scenario, construct
the equilibrium and emit a human-readable table plus machine-readable plot
data; ``verify`` re-derives the equilibrium, runs the identity check, a
seeded deviation sweep and the IR/Pareto checks, and writes a JSON verdict;
``compare`` reports per-insurer welfare-gain deltas between two scenarios.

Exit codes: 0 success, 1 scenario/validation problem (also a failed
verification), 2 unsupported dependence regime, 3 numerical failure.  All
artifacts are deterministic given scenario, grid and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .bestresponse import EPS_NUM
from .equilibrium import (
    EquilibriumReport,
    SpneStrategy,
    build_report,
    construct_spne,
    equilibrium_identity_check,
    solve_stackelberg,
    verify_no_deviation,
)
from .errors import (
    InfeasibleError,
    NumericalError,
    ReinsGameError,
    UnsupportedRegimeError,
    ValidationError,
)
from .market import (
    Allocation,
    MarketSpec,
    load_market,
    second_lowest_preference,
    true_preferences,
)
from .pareto import check_ir, check_po

__all__ = ["RunConfig", "main", "cmd_solve", "cmd_verify", "cmd_compare"]

COMMANDS = ("solve-spne", "solve-stackelberg", "verify", "compare")
FORMATS = ("table", "csv", "json")
IDENTITY_TOL = 1e-6


@dataclass(frozen=True)
class RunConfig:
    """Validated invocation parameters shared by all commands."""

    scenario_path: Path
    command: str
    grid_cells: int | None
    seed: int
    output_dir: Path
    formats: tuple[str, ...]
    deviations: int

    def __post_init__(self) -> None:
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")
        if self.grid_cells is not None and self.grid_cells < 100:
            raise ValidationError(
                f"--grid-cells must be >= 100, got {self.grid_cells}"
            )
        bad = [f for f in self.formats if f not in FORMATS]
        if bad:
            raise ValidationError(f"unknown output formats: {bad}")


def resolve_scenario(name: str) -> Path:
    """Accept a filesystem path or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-5] if name.endswith(".toml") else name
    bundled = resources.files("reinsgame").joinpath(f"scenarios/{stem}.toml")
    if bundled.is_file():
        return Path(str(bundled))
    raise ValidationError(f"scenario not found: {name}")


# ---------------------------------------------------------------------------
# Artifact writers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _f6(value: float) -> str:
    text = f"{value:.6f}"
    return f"{0.0:.6f}" if float(text) == 0.0 else text


def _table_text(title: str, report: EquilibriumReport) -> str:
    header = f"{'Agent':<14}{'Initial Risk':>16}{'Premium Paid':>16}{'Post-Transfer Risk':>20}{'Welfare Gain':>16}"
    lines = [title, "=" * len(header), header, "-" * len(header)]
    for k, o in enumerate(report.insurers, start=1):
        lines.append(
            f"{f'Insurer {k}':<14}{_f6(o.initial_risk):>16}{_f6(o.premium_total):>16}"
            f"{_f6(o.post_transfer_risk):>20}{_f6(o.welfare_gain):>16}"
        )
    for k, o in enumerate(report.reinsurers, start=1):
        lines.append(
            f"{f'Reinsurer {k}':<14}{_f6(0.0):>16}{'--':>16}"
            f"{_f6(o.post_transfer_risk):>20}{_f6(o.welfare_gain):>16}"
        )
    lines.append("-" * len(header))
    flags = [
        f"IR={'PASS' if report.individually_rational else 'FAIL'}",
        f"PO={'PASS' if report.pareto_optimal else 'FAIL'}",
    ]
    if report.deviation_check_passed is not None:
        flags.append(
            f"deviations={'PASS' if report.deviation_check_passed else 'FAIL'}"
        )
    residual = max(o.identity_residual for o in report.reinsurers)
    flags.append(f"max identity residual={residual:.3e}")
    lines.append("Flags: " + "  ".join(flags))
    if not all(report.tau_bar_monotone):
        bad = [k + 1 for k, ok in enumerate(report.tau_bar_monotone) if not ok]
        lines.append(f"Warning: tau_bar not monotone for insurers {bad}")
    return "\n".join(lines) + "\n"


def _write_curve_csvs(market: MarketSpec, out: Path) -> None:
    z = market.grid.nodes
    for i in range(market.n):
        prefs = true_preferences(market, i)
        tau_bar = second_lowest_preference(market, i)
        cols = [("z", z), ("alpha", prefs[0].values)]
        cols += [(f"tau_{j}", prefs[j].values) for j in range(1, market.m + 1)]
        cols.append(("tau_bar", tau_bar.values))
        _write_csv(out / f"curves_{i + 1}.csv", cols)


def _write_indemnity_csvs(market: MarketSpec, strategy: SpneStrategy, out: Path) -> None:
    from .market import indemnity_profile

    grid = market.grid
    for i in range(market.n):
        cols = [("x", grid.nodes)]
        profiles = [
            indemnity_profile(strategy.responses.gamma[i, j], grid)
            for j in range(market.m)
        ]
        cols += [(f"I_{j + 1}", profiles[j]) for j in range(market.m)]
        cols.append(("total", np.sum(profiles, axis=0)))
        _write_csv(out / f"indemnity_{i + 1}.csv", cols)


def _write_csv(path: Path, columns: list[tuple[str, np.ndarray]]) -> None:
    names = [name for name, _ in columns]
    arrays = [np.asarray(values) for _, values in columns]
    lines = [",".join(names)]
    for row in zip(*arrays):
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_solve(config: RunConfig) -> int:
    market = load_market(config.scenario_path, grid_cells=config.grid_cells)
    if config.command == "solve-stackelberg":
        strategy, report = solve_stackelberg(
            market, deviation_sweeps=config.deviations, seed=config.seed
        )
    else:
        strategy = construct_spne(market)
        report = build_report(
            market, strategy, deviation_sweeps=config.deviations, seed=config.seed
        )

    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    title = f"Equilibrium report -- {config.scenario_path.name} ({config.command})"
    table = _table_text(title, report)
    if "table" in config.formats:
        (out / "report.txt").write_text(table)
    if "json" in config.formats:
        _write_json(
            out / "report.json",
            {
                "scenario": config.scenario_path.name,
                "command": config.command,
                "dependence": market.dependence,
                "grid_cells": market.grid.num_cells,
                "seed": config.seed,
                "clauses": strategy.log.summary(),
                "report": report.to_dict(),
            },
        )
    if "csv" in config.formats:
        _write_curve_csvs(market, out)
        _write_indemnity_csvs(market, strategy, out)
    sys.stdout.write(table)
    return 0


def cmd_verify(config: RunConfig, premia_from: Path | None = None) -> int:
    market = load_market(config.scenario_path, grid_cells=config.grid_cells)
    strategy = construct_spne(market)
    report = build_report(market, strategy)

    premia = np.array([list(o.premiums) for o in report.insurers])
    premia_source = "equilibrium"
    if premia_from is not None:
        loaded = json.loads(Path(premia_from).read_text())
        rows = loaded["report"]["insurers"] if "report" in loaded else loaded["insurers"]
        premia = np.array([row["premiums"] for row in rows], dtype=float)
        premia_source = str(premia_from)
        if premia.shape != (market.n, market.m):
            raise ValidationError(
                f"premia from {premia_from} have shape {premia.shape}, "
                f"expected ({market.n}, {market.m})"
            )
    allocation = Allocation(indemnities=strategy.responses, premia=premia)

    residuals = [
        equilibrium_identity_check(market, strategy, j) for j in range(market.m)
    ]
    sweeps = [
        verify_no_deviation(
            market, strategy, j, num_deviations=config.deviations, seed=config.seed + j
        )
        for j in range(market.m)
    ]
    margins = check_ir(market, allocation)
    certificate = check_po(market, allocation)

    identity_ok = all(r <= IDENTITY_TOL for r in residuals)
    deviations_ok = all(v.passed for v in sweeps)
    ir_ok = margins.ok()
    po_ok = certificate.pareto_optimal
    overall = identity_ok and deviations_ok and ir_ok and po_ok

    verdict = {
        "scenario": config.scenario_path.name,
        "grid_cells": market.grid.num_cells,
        "seed": config.seed,
        "deviations_per_reinsurer": config.deviations,
        "premia_source": premia_source,
        "identity": {
            "pass": identity_ok,
            "residuals": [float(r) for r in residuals],
            "tolerance": IDENTITY_TOL,
        },
        "deviations": {
            "pass": deviations_ok,
            "per_reinsurer": [
                {
                    "pass": v.passed,
                    "worst_improvement": v.worst_improvement,
                    "worst_deviation": v.worst_deviation,
                    "checked": v.checked,
                }
                for v in sweeps
            ],
            "tolerance": EPS_NUM,
        },
        "individual_rationality": {
            "pass": ir_ok,
            "insurer_margins": [float(v) for v in margins.insurers],
            "reinsurer_margins": [float(v) for v in margins.reinsurers],
        },
        "pareto": {
            "pass": po_ok,
            "support_ok": certificate.support_ok,
            "support_violation": certificate.support_violation,
            "aggregate_risk": certificate.aggregate_risk,
        },
        "overall": "PASS" if overall else "FAIL",
    }
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "verdict.json", verdict)

    for name, ok in (
        ("identity", identity_ok),
        ("deviations", deviations_ok),
        ("individual rationality", ir_ok),
        ("pareto optimality", po_ok),
    ):
        sys.stdout.write(f"{name}: {'PASS' if ok else 'FAIL'}\n")
    sys.stdout.write(f"overall: {verdict['overall']}\n")
    return 0 if overall else 1


def cmd_compare(config: RunConfig, against: Path) -> int:
    market_a = load_market(config.scenario_path, grid_cells=config.grid_cells)
    market_b = load_market(against, grid_cells=config.grid_cells)
    if market_a.n != market_b.n:
        raise ValidationError(
            f"scenarios have different insurer counts: {market_a.n} vs {market_b.n}"
        )
    report_a = build_report(market_a, construct_spne(market_a))
    report_b = build_report(market_b, construct_spne(market_b))

    deltas = [
        a.welfare_gain - b.welfare_gain
        for a, b in zip(report_a.insurers, report_b.insurers)
    ]
    post_deltas = [
        a.post_transfer_risk - b.post_transfer_risk
        for a, b in zip(report_a.insurers, report_b.insurers)
    ]
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "compare.json",
        {
            "scenario": config.scenario_path.name,
            "against": against.name,
            "welfare_gain_delta": deltas,
            "post_transfer_risk_delta": post_deltas,
        },
    )
    lines = [f"Welfare-gain deltas ({config.scenario_path.name} minus {against.name}):"]
    for k, d in enumerate(deltas, start=1):
        lines.append(f"  Insurer {k}: {d:+.6f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reinsgame",
        description="Equilibrium solver for sequential reinsurance markets "
        "under Choquet risk measures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("solve-spne", "construct the equilibrium and write report artifacts"),
        ("solve-stackelberg", "solve the single-reinsurer (monopoly) market"),
        ("verify", "run identity, deviation, IR and Pareto checks"),
        ("compare", "welfare-gain deltas between two scenarios"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scenario", required=True, help="scenario path or bundled name")
        p.add_argument("--grid-cells", type=int, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="artifact directory")
        p.add_argument(
            "--format",
            default="table,csv,json",
            help="comma-separated subset of table,csv,json",
        )
        if name in ("solve-spne", "solve-stackelberg"):
            p.add_argument(
                "--deviations",
                type=int,
                default=200,
                help="deviation sweeps per reinsurer for the report flag (0 skips)",
            )
        if name == "verify":
            p.add_argument("--deviations", type=int, default=2000)
            p.add_argument(
                "--report",
                default=None,
                help="report.json whose premia override the equilibrium premia",
            )
        if name == "compare":
            p.add_argument("--against", required=True, help="baseline scenario")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig(
            scenario_path=resolve_scenario(args.scenario),
            command=args.command,
            grid_cells=args.grid_cells,
            seed=args.seed,
            output_dir=Path(args.out),
            formats=tuple(f.strip() for f in args.format.split(",") if f.strip()),
            deviations=getattr(args, "deviations", 0),
        )
        if args.command in ("solve-spne", "solve-stackelberg"):
            return cmd_solve(config)
        if args.command == "verify":
            report = getattr(args, "report", None)
            return cmd_verify(config, Path(report) if report else None)
        return cmd_compare(config, resolve_scenario(args.against))
    except (ValidationError, InfeasibleError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except UnsupportedRegimeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (NumericalError, FloatingPointError) as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return 3
    except ReinsGameError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
