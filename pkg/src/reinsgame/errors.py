"""Exception types shared across the package.

The CLI maps these onto exit codes: scenario/validation problems are exit
code 1, unsupported dependence regimes exit code 2, numerical failures
exit code 3.
"""


class ReinsGameError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(ReinsGameError):
    """An input violates a structural invariant (bad scenario field, negative
    loading, marginal weights outside [0, 1], and so on)."""


class GridMismatchError(ValidationError):
    """A curve or matrix is not defined on the grid it is being used with."""


class UnsupportedRegimeError(ReinsGameError):
    """The market's dependence regime does not admit the requested evaluation
    (reinsurer aggregates are only defined for risk-neutral beliefs or
    comonotone losses)."""


class NumericalError(ReinsGameError):
    """An iterative numerical procedure failed to converge."""


class InfeasibleError(ReinsGameError):
    """A linear system has no solution (inconsistent premium targets)."""
