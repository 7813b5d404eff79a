"""Survival-curve algebra, distortion composition, and Choquet integration.

Every quantity in the market game reduces to integrals of the form
``int_0^M v(X > z) dz``: a capacity evaluated along the tail events of a
bounded loss, i.e. a nonincreasing survival curve on ``[0, M]``.  Curves are
stored piecewise-constant on the cells of a shared :class:`Grid`.  For
analytically specified curves (censored exponentials and their distortions,
which are all of the form ``a + b*exp(-r*z)`` between breakpoints) the stored
cell value is the exact cell average, so the Choquet integral of such a curve
is exact on any grid, and once the grid has been refined at all pairwise
crossings the cellwise ordering of a family of curves agrees with the
pointwise ordering almost everywhere.

That combination -- exact averages plus crossing refinement -- is what lets
the solver reproduce closed-form equilibrium values to well below the table
tolerances without any asymptotic quadrature error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import GridMismatchError, NumericalError, ValidationError

__all__ = [
    "Grid",
    "SurvivalCurve",
    "DistortionSpec",
    "PiecewiseExpCurve",
    "LossModel",
    "NonMonotoneCurveWarning",
    "choquet_integral",
    "distort",
    "scale",
    "kth_lowest",
    "refine_crossings",
    "es_exponential",
]

#: Default curve-value equality tolerance (relative, see Grid.values_close).
DEFAULT_EPS_EQ = 1e-9
#: Default bisection tolerance for crossing refinement, in loss units.
DEFAULT_EPS_REF = 1e-12


class NonMonotoneCurveWarning(UserWarning):
    """Emitted when an order-statistic curve fails the nonincreasing check.

    The second-lowest of valid survival curves is provably nonincreasing,
    so this fires only for malformed inputs; it is a diagnostic, not an
    assertion.
    """


@dataclass(frozen=True)
class Grid:
    """Strictly increasing nodes ``0 = z_0 < ... < z_K = M`` on a loss range.

    Cell ``k`` is the half-open interval ``[z_k, z_{k+1})``.  ``eps_eq`` is
    the relative tolerance under which two curve values are considered tied
    (ties feed every tie-break rule in the game), ``eps_ref`` the absolute
    tolerance to which crossing points are located.
    """

    nodes: np.ndarray
    eps_eq: float = DEFAULT_EPS_EQ
    eps_ref: float = DEFAULT_EPS_REF

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValidationError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValidationError("grid must start at 0")
        if not np.all(np.diff(nodes) > 0):
            raise ValidationError("grid nodes must be strictly increasing")
        if not math.isfinite(nodes[-1]) or nodes[-1] <= 0:
            raise ValidationError("grid upper bound must be finite and > 0")
        if self.eps_eq <= 0 or self.eps_ref <= 0:
            raise ValidationError("grid tolerances must be > 0")
        nodes.setflags(write=False)

    @classmethod
    def uniform(
        cls,
        upper_bound: float,
        cells: int,
        eps_eq: float = DEFAULT_EPS_EQ,
        eps_ref: float = DEFAULT_EPS_REF,
    ) -> "Grid":
        if cells < 1:
            raise ValidationError("grid must have at least one cell")
        return cls(np.linspace(0.0, float(upper_bound), cells + 1), eps_eq, eps_ref)

    @property
    def upper_bound(self) -> float:
        return float(self.nodes[-1])

    @property
    def num_cells(self) -> int:
        return self.nodes.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def cell_left(self) -> np.ndarray:
        return self.nodes[:-1]

    def refined_with(self, points: Iterable[float]) -> "Grid":
        """New grid with extra nodes inserted, deduplicated against existing
        nodes so cells stay strictly positive in width."""
        sep = max(self.eps_ref, 1e-14 * self.upper_bound)
        extra = sorted(
            p for p in points if 0.0 < p < self.upper_bound and math.isfinite(p)
        )
        merged = list(self.nodes)
        for p in extra:
            idx = np.searchsorted(merged, p)
            lo = merged[idx - 1] if idx > 0 else -math.inf
            hi = merged[idx] if idx < len(merged) else math.inf
            if p - lo > sep and hi - p > sep:
                merged.insert(idx, p)
        return Grid(np.asarray(merged), self.eps_eq, self.eps_ref)

    def values_close(self, a, b):
        """Tie test: ``|a - b| <= eps_eq * max(1, |a|, |b|)`` elementwise."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        scale_ = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
        return np.abs(a - b) <= self.eps_eq * scale_

    def require_matches(self, values: np.ndarray, what: str = "curve") -> None:
        if values.shape != self.nodes.shape:
            raise GridMismatchError(
                f"{what} has {values.size} values but the grid has "
                f"{self.nodes.size} nodes"
            )

    def cell_index(self, z: float) -> int:
        """Index of the cell containing z (z = M maps to the last cell)."""
        if not 0.0 <= z <= self.upper_bound:
            raise ValidationError(f"z={z} outside [0, {self.upper_bound}]")
        idx = int(np.searchsorted(self.nodes, z, side="right")) - 1
        return min(idx, self.num_cells - 1)


@dataclass(frozen=True)
class SurvivalCurve:
    """A nonnegative curve sampled per grid cell.

    ``values`` has one entry per node; ``values[k]`` is the (constant) value
    on cell ``[z_k, z_{k+1})`` and ``values[-1]`` the value at ``z = M``
    itself (it carries no weight in integrals).  Monotonicity is an invariant
    of curves that represent survival functions and is enforced by
    :meth:`validated`; raw construction only checks finiteness and sign, so
    order-statistic outputs can be represented without asserting monotone.
    """

    values: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size < 2:
            raise ValidationError("curve values must be a 1-D array per grid node")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"curve {self.label!r} has non-finite values")
        if np.any(values < 0):
            raise ValidationError(f"curve {self.label!r} has negative values")
        values.setflags(write=False)

    @property
    def cell_values(self) -> np.ndarray:
        return self.values[:-1]

    def is_nonincreasing(self, grid: Grid) -> bool:
        diff = np.diff(self.values)
        tol = grid.eps_eq * np.maximum(
            1.0, np.maximum(np.abs(self.values[:-1]), np.abs(self.values[1:]))
        )
        return bool(np.all(diff <= tol))

    @classmethod
    def validated(cls, values: np.ndarray, grid: Grid, label: str = "") -> "SurvivalCurve":
        curve = cls(values, label)
        grid.require_matches(curve.values, f"curve {label!r}")
        if not curve.is_nonincreasing(grid):
            raise ValidationError(f"curve {label!r} is not nonincreasing")
        return curve

    @classmethod
    def from_analytic(cls, fn: "PiecewiseExpCurve", grid: Grid, label: str = "") -> "SurvivalCurve":
        """Sample with exact cell averages; the final slot holds the point
        value at M."""
        vals = np.empty(grid.num_cells + 1)
        vals[:-1] = fn.cell_averages(grid)
        vals[-1] = fn.value(grid.upper_bound)
        # Guard against -1e-18 style float dust from the averaging formulas.
        np.clip(vals, 0.0, None, out=vals)
        return cls(vals, label)

    @classmethod
    def from_step(
        cls, step_nodes: np.ndarray, step_values: np.ndarray, grid: Grid, label: str = ""
    ) -> "SurvivalCurve":
        """Sample a tabulated step function (value ``v_k`` on
        ``[x_k, x_{k+1})``, last value beyond the last node)."""
        step_nodes = np.asarray(step_nodes, dtype=float)
        step_values = np.asarray(step_values, dtype=float)
        idx = np.searchsorted(step_nodes, grid.nodes, side="right") - 1
        idx = np.clip(idx, 0, step_values.size - 1)
        return cls(step_values[idx], label)


@dataclass(frozen=True)
class DistortionSpec:
    """A distortion ``T: [0,1] -> [0,1]``, nondecreasing with T(0)=0, T(1)=1.

    Kinds: ``expected-shortfall`` (T(t) = min(t/level, 1)), ``value-at-risk``
    (T(t) = 1 for t > level else 0, flagged non-concave), ``identity``, and
    ``custom-concave-table`` (piecewise-linear through given points).
    """

    kind: str
    level: float | None = None
    table: tuple[tuple[float, float], ...] | None = None

    _KINDS = ("expected-shortfall", "value-at-risk", "identity", "custom-concave-table")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValidationError(f"unknown distortion kind {self.kind!r}")
        if self.kind in ("expected-shortfall", "value-at-risk"):
            if self.level is None or not 0.0 < self.level < 1.0:
                raise ValidationError(
                    f"{self.kind} level must lie in (0, 1), got {self.level}"
                )
        if self.kind == "custom-concave-table":
            pts = self.table
            if not pts or len(pts) < 2:
                raise ValidationError("table distortion needs at least two points")
            ts = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            if ts[0] != 0.0 or ts[-1] != 1.0 or ys[0] != 0.0 or ys[-1] != 1.0:
                raise ValidationError("table distortion must run from (0,0) to (1,1)")
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ValidationError("table distortion abscissae must increase")
            if any(b < a for a, b in zip(ys, ys[1:])):
                raise ValidationError("table distortion must be nondecreasing")

    @classmethod
    def expected_shortfall(cls, level: float) -> "DistortionSpec":
        return cls("expected-shortfall", level=level)

    @classmethod
    def value_at_risk(cls, level: float) -> "DistortionSpec":
        return cls("value-at-risk", level=level)

    @classmethod
    def identity(cls) -> "DistortionSpec":
        return cls("identity")

    @classmethod
    def concave_table(cls, points: Sequence[tuple[float, float]]) -> "DistortionSpec":
        return cls("custom-concave-table", table=tuple((float(a), float(b)) for a, b in points))

    @property
    def concave(self) -> bool:
        """Value-at-risk is supported but is not a concave distortion."""
        if self.kind == "value-at-risk":
            return False
        if self.kind == "custom-concave-table":
            slopes = [
                (y2 - y1) / (t2 - t1)
                for (t1, y1), (t2, y2) in zip(self.table, self.table[1:])
            ]
            return all(s2 <= s1 + 1e-12 for s1, s2 in zip(slopes, slopes[1:]))
        return True

    def transform(self, t):
        """Apply T pointwise (scalar or ndarray)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "identity":
            out = t.copy()
        elif self.kind == "expected-shortfall":
            out = np.minimum(t / self.level, 1.0)
        elif self.kind == "value-at-risk":
            out = (t > self.level).astype(float)
        else:
            ts = np.array([p[0] for p in self.table])
            ys = np.array([p[1] for p in self.table])
            out = np.interp(t, ts, ys)
        return out if out.ndim else float(out)

    def linear_pieces(self) -> list[tuple[float, float, float, float]]:
        """T as linear pieces ``(t_lo, t_hi, intercept, slope)`` covering
        [0, 1]; value-at-risk appears as two constant pieces with the jump at
        ``level``."""
        if self.kind == "identity":
            return [(0.0, 1.0, 0.0, 1.0)]
        if self.kind == "expected-shortfall":
            g = self.level
            return [(0.0, g, 0.0, 1.0 / g), (g, 1.0, 1.0, 0.0)]
        if self.kind == "value-at-risk":
            g = self.level
            return [(0.0, g, 0.0, 0.0), (g, 1.0, 1.0, 0.0)]
        pieces = []
        for (t1, y1), (t2, y2) in zip(self.table, self.table[1:]):
            slope = (y2 - y1) / (t2 - t1)
            pieces.append((t1, t2, y1 - slope * t1, slope))
        return pieces


@dataclass(frozen=True)
class PiecewiseExpCurve:
    """Exact representation ``a_s + b_s * exp(-r_s * z)`` on ``[t_s, t_{s+1})``.

    The curve is identically zero at and beyond the last knot (censoring
    convention: a loss capped at ``cap`` has zero tail probability past the
    cap).  Every analytic curve the market needs -- censored-exponential
    survivals, their distortions under piecewise-linear T, and positive
    scalings -- stays inside this family, so cell averages are closed form.
    """

    knots: tuple[float, ...]
    consts: tuple[float, ...]
    coefs: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.knots) != len(self.consts) + 1:
            raise ValidationError("piecewise curve needs one more knot than segment")
        if not all(b > a for a, b in zip(self.knots, self.knots[1:])):
            raise ValidationError("piecewise curve knots must increase")
        if self.knots[0] != 0.0:
            raise ValidationError("piecewise curve must start at 0")

    @classmethod
    def censored_exp(cls, rate: float, cap: float) -> "PiecewiseExpCurve":
        if rate <= 0:
            raise ValidationError(f"exponential rate must be > 0, got {rate}")
        if cap <= 0:
            raise ValidationError(f"censoring cap must be > 0, got {cap}")
        return cls((0.0, float(cap)), (0.0,), (1.0,), (float(rate),))

    @classmethod
    def constant(cls, value: float, cap: float) -> "PiecewiseExpCurve":
        return cls((0.0, float(cap)), (float(value),), (0.0,), (0.0,))

    def scaled(self, c: float) -> "PiecewiseExpCurve":
        return PiecewiseExpCurve(
            self.knots,
            tuple(c * a for a in self.consts),
            tuple(c * b for b in self.coefs),
            self.rates,
        )

    def breakpoints(self) -> tuple[float, ...]:
        """Interior regime switches, including the terminal drop to zero."""
        return self.knots[1:]

    def value(self, z: float) -> float:
        if z >= self.knots[-1]:
            return 0.0
        z = max(z, 0.0)
        s = int(np.searchsorted(self.knots, z, side="right")) - 1
        return self.consts[s] + self.coefs[s] * math.exp(-self.rates[s] * z)

    def values(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        seg = np.searchsorted(self.knots, z, side="right") - 1
        inside = (seg >= 0) & (z < self.knots[-1])
        segi = np.clip(seg, 0, len(self.consts) - 1)
        a = np.asarray(self.consts)[segi]
        b = np.asarray(self.coefs)[segi]
        r = np.asarray(self.rates)[segi]
        return np.where(inside, a + b * np.exp(-r * z), 0.0)

    def integral(self, lo: float, hi: float) -> float:
        """Exact integral over [lo, hi], splitting at interior knots."""
        if hi <= lo:
            return 0.0
        total = 0.0
        for s in range(len(self.consts)):
            a = max(lo, self.knots[s])
            b = min(hi, self.knots[s + 1])
            if b <= a:
                continue
            total += self.consts[s] * (b - a) + _exp_integral(
                self.coefs[s], self.rates[s], a, b
            )
        return total

    def cell_averages(self, grid: Grid) -> np.ndarray:
        """Exact mean value on every grid cell (vectorized by segment)."""
        left = grid.nodes[:-1]
        right = grid.nodes[1:]
        acc = np.zeros(grid.num_cells)
        for s in range(len(self.consts)):
            a = np.clip(left, self.knots[s], self.knots[s + 1])
            b = np.clip(right, self.knots[s], self.knots[s + 1])
            w = b - a
            mask = w > 0
            if not np.any(mask):
                continue
            seg = self.consts[s] * w[mask]
            if self.coefs[s] != 0.0 and self.rates[s] != 0.0:
                r = self.rates[s]
                seg = seg + self.coefs[s] * (
                    -np.exp(-r * a[mask]) * np.expm1(-r * w[mask]) / r
                )
            elif self.coefs[s] != 0.0:
                seg = seg + self.coefs[s] * w[mask]
            acc[mask] += seg
        return acc / grid.widths


def _exp_integral(coef: float, rate: float, a: float, b: float) -> float:
    """int_a^b coef * exp(-rate z) dz, stable for small rate*(b-a)."""
    if coef == 0.0:
        return 0.0
    if rate == 0.0:
        return coef * (b - a)
    return -coef * math.exp(-rate * a) * math.expm1(-rate * (b - a)) / rate


def compose_distortion(base: PiecewiseExpCurve, d: DistortionSpec) -> PiecewiseExpCurve:
    """Exact composition T(S(z)) for nonincreasing S in the exp family.

    Each base segment is cut where S crosses a kink (or jump) level of T;
    between cuts T is affine in t, so T(S(z)) = c0 + c1*S(z) stays in the
    family.
    """
    if d.kind == "identity":
        return base
    pieces = d.linear_pieces()
    boundaries = [p[0] for p in pieces[1:]]  # interior t-levels of T

    knots: list[float] = [0.0]
    consts: list[float] = []
    coefs: list[float] = []
    rates: list[float] = []

    for s in range(len(base.consts)):
        t0, t1 = base.knots[s], base.knots[s + 1]
        a, b, r = base.consts[s], base.coefs[s], base.rates[s]
        cuts: list[float] = []
        if b > 0.0 and r > 0.0:
            for level in boundaries:
                frac = (level - a) / b
                if frac > 0.0:
                    z = -math.log(frac) / r
                    if t0 < z < t1:
                        cuts.append(z)
        zs = [t0] + sorted(cuts) + [t1]
        for lo, hi in zip(zs, zs[1:]):
            mid = 0.5 * (lo + hi)
            s_mid = a + b * math.exp(-r * mid) if (b or r) else a
            c0, c1 = _piece_at(pieces, s_mid)
            knots.append(hi)
            consts.append(c0 + c1 * a)
            coefs.append(c1 * b)
            rates.append(r)
    return _merge_segments(knots, consts, coefs, rates)


def _piece_at(pieces, t: float) -> tuple[float, float]:
    for t_lo, t_hi, c0, c1 in pieces:
        if t_lo <= t <= t_hi:
            return c0, c1
    # t above 1 can only come from invalid inputs; clamp to the last piece.
    t_lo, t_hi, c0, c1 = pieces[-1]
    return c0, c1


def _merge_segments(knots, consts, coefs, rates) -> PiecewiseExpCurve:
    """Drop interior knots between identical adjacent segments."""
    mk: list[float] = [knots[0]]
    mc: list[float] = []
    mb: list[float] = []
    mr: list[float] = []
    for i in range(len(consts)):
        if mc and (mc[-1], mb[-1], mr[-1]) == (consts[i], coefs[i], rates[i]):
            mk[-1] = knots[i + 1]
            continue
        mc.append(consts[i])
        mb.append(coefs[i])
        mr.append(rates[i])
        mk.append(knots[i + 1])
    return PiecewiseExpCurve(tuple(mk), tuple(mc), tuple(mb), tuple(mr))


@dataclass(frozen=True)
class LossModel:
    """Tail-probability model of one bounded loss (or one belief about it).

    Either an analytic censored-exponential-family curve or a tabulated step
    curve; both expose the breakpoints the working grid must contain and can
    be sampled as a validated survival curve.
    """

    analytic: PiecewiseExpCurve | None = None
    step_nodes: np.ndarray | None = None
    step_values: np.ndarray | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if (self.analytic is None) == (self.step_nodes is None):
            raise ValidationError("loss model needs exactly one of analytic/table form")
        if self.step_nodes is not None:
            nodes = np.asarray(self.step_nodes, dtype=float)
            vals = np.asarray(self.step_values, dtype=float)
            if nodes.ndim != 1 or nodes.size != vals.size or nodes.size < 1:
                raise ValidationError("tabulated curve needs matching nodes/values")
            if nodes[0] != 0.0 or not np.all(np.diff(nodes) > 0):
                raise ValidationError("tabulated curve nodes must increase from 0")
            object.__setattr__(self, "step_nodes", nodes)
            object.__setattr__(self, "step_values", vals)

    @classmethod
    def censored_exponential(cls, rate: float, cap: float, label: str = "") -> "LossModel":
        return cls(analytic=PiecewiseExpCurve.censored_exp(rate, cap), label=label)

    @classmethod
    def from_table(cls, nodes, values, label: str = "") -> "LossModel":
        return cls(step_nodes=np.asarray(nodes), step_values=np.asarray(values), label=label)

    def breakpoints(self) -> tuple[float, ...]:
        if self.analytic is not None:
            return self.analytic.breakpoints()
        return tuple(self.step_nodes[1:])

    def survival(self, grid: Grid, require_probability: bool = True) -> SurvivalCurve:
        """The tail curve on the grid.  It must vanish at the upper bound
        (the underlying loss is bounded by M) and, when it represents a
        probability measure, stay within [0, 1]; a general finite capacity
        may exceed 1."""
        if self.analytic is not None:
            curve = SurvivalCurve.from_analytic(self.analytic, grid, self.label)
        else:
            curve = SurvivalCurve.from_step(self.step_nodes, self.step_values, grid, self.label)
        if require_probability and np.any(curve.values > 1.0 + grid.eps_eq):
            raise ValidationError(f"survival curve {self.label!r} exceeds 1")
        if curve.values[-1] > grid.eps_eq:
            raise ValidationError(
                f"survival curve {self.label!r} does not vanish at the upper bound"
            )
        if not curve.is_nonincreasing(grid):
            raise ValidationError(f"survival curve {self.label!r} is not nonincreasing")
        return curve


# ---------------------------------------------------------------------------
# Operations


def choquet_integral(curve: SurvivalCurve, grid: Grid) -> float:
    """``int_0^M v(X > z) dz`` for the piecewise-constant curve: a finite sum,
    exact by construction and nonnegative."""
    grid.require_matches(curve.values, f"curve {curve.label!r}")
    return float(np.dot(curve.cell_values, grid.widths))


def distort(loss: LossModel, d: DistortionSpec, grid: Grid) -> SurvivalCurve:
    """Pointwise T(P(X > z)).  Analytic losses are composed in closed form
    (exact cell averages); tabulated losses have T applied to their step
    values, which is exact for the step model."""
    if loss.analytic is not None:
        composed = compose_distortion(loss.analytic, d)
        return SurvivalCurve.from_analytic(composed, grid, label=loss.label)
    base = loss.survival(grid)
    return SurvivalCurve(d.transform(base.values), label=base.label)


def scale(curve: SurvivalCurve, c: float) -> SurvivalCurve:
    """Pointwise multiplication by c >= 0; preserves monotonicity."""
    if c < 0:
        raise ValidationError(f"scale factor must be >= 0, got {c}")
    return SurvivalCurve(curve.values * c, label=curve.label)


def kth_lowest(curves: Sequence[SurvivalCurve], k: int, grid: Grid) -> SurvivalCurve:
    """Cellwise k-th order statistic (k=0 lowest, k=1 second-lowest).

    The output for k >= 1 is not asserted monotone; a diagnostic warning is
    emitted if it fails the nonincreasing check.
    """
    if not curves:
        raise ValidationError("kth_lowest needs at least one curve")
    if not 0 <= k < len(curves):
        raise ValidationError(f"order statistic k={k} out of range for {len(curves)} curves")
    stacked = np.stack([c.values for c in curves])
    for c in curves:
        grid.require_matches(c.values, f"curve {c.label!r}")
    picked = np.sort(stacked, axis=0)[k]
    out = SurvivalCurve(picked, label=f"order-{k}")
    if k >= 1 and not out.is_nonincreasing(grid):
        warnings.warn(
            f"order statistic k={k} of the supplied curves is not nonincreasing",
            NonMonotoneCurveWarning,
            stacklevel=2,
        )
    return out


def refine_crossings(
    curves: Sequence[PiecewiseExpCurve],
    grid: Grid,
    labels: Sequence[str] | None = None,
) -> Grid:
    """Grid augmented with every curve's breakpoints and all pairwise
    crossing points, each located by bisection to within ``grid.eps_ref``.

    On the refined grid the pointwise ordering of the input curves is
    constant on every cell.
    """
    points: list[float] = []
    for fn in curves:
        points.extend(fn.breakpoints())
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            pair = (
                labels[i] if labels else f"curve[{i}]",
                labels[j] if labels else f"curve[{j}]",
            )
            points.extend(_pair_crossings(curves[i], curves[j], grid, pair))
    return grid.refined_with(points)


def _pair_crossings(
    f: PiecewiseExpCurve, g: PiecewiseExpCurve, grid: Grid, pair: tuple[str, str]
) -> list[float]:
    scan = np.unique(
        np.concatenate(
            [
                grid.nodes,
                np.asarray(f.breakpoints(), dtype=float),
                np.asarray(g.breakpoints(), dtype=float),
            ]
        )
    )
    scan = scan[(scan >= 0.0) & (scan <= grid.upper_bound)]
    h = f.values(scan) - g.values(scan)
    sign = np.sign(h)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    found = []
    for idx in flips:
        found.append(_bisect_crossing(f, g, scan[idx], scan[idx + 1], grid.eps_ref, pair))
    return found


def _bisect_crossing(
    f: PiecewiseExpCurve,
    g: PiecewiseExpCurve,
    lo: float,
    hi: float,
    eps_ref: float,
    pair: tuple[str, str],
) -> float:
    h_lo = f.value(lo) - g.value(lo)
    for _ in range(200):
        if hi - lo <= eps_ref:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        h_mid = f.value(mid) - g.value(mid)
        if h_mid == 0.0:
            return mid
        if (h_lo < 0) == (h_mid < 0):
            lo, h_lo = mid, h_mid
        else:
            hi = mid
    raise NumericalError(
        f"crossing bisection between {pair[0]} and {pair[1]} did not converge "
        f"on [{lo}, {hi}]"
    )


def es_exponential(rate: float, level: float) -> float:
    """Closed-form expected shortfall of an (uncensored) exponential loss:
    ``(1/rate) * (1 - log(level))``.  For a loss censored at cap M the exact
    value is smaller by ``exp(-rate*M) / (rate*level)``; the closed form is a
    valid oracle whenever that correction is negligible."""
    if rate <= 0 or not 0.0 < level < 1.0:
        raise ValidationError("es_exponential requires rate > 0 and level in (0,1)")
    return (1.0 - math.log(level)) / rate
