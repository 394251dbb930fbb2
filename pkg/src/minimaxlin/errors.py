"""Exception types raised across the package."""


class MinimaxLinError(Exception):
    """Base class for all package errors."""


class DataError(MinimaxLinError):
    """Malformed input data (bad CSV row, invalid field, shape mismatch)."""


class MissingArm(DataError):
    """The functional target references a treatment arm with no units."""


class InvalidPruning(DataError):
    """1-D constraint-graph pruning requested for multivariate covariates."""


class InvalidDelta(MinimaxLinError):
    """Ball parameter delta must be strictly positive."""


class InvalidRule(MinimaxLinError):
    """Delta-selection rule is malformed (e.g. empty grid)."""


class InvalidVariance(MinimaxLinError):
    """Known-variance transform received a nonpositive noise scale."""


class SolverStalled(MinimaxLinError):
    """Solver exhausted its iteration budget before meeting tolerances."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class OracleTooLarge(MinimaxLinError):
    """Brute-force oracle refused an instance above its enumeration cap."""


class DegenerateDenominator(MinimaxLinError):
    """Ratio-type composite with denominator estimate too close to zero."""
