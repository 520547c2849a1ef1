"""Exception hierarchy for the hvdcgrid package."""


class HvdcGridError(Exception):
    """Base class for all package errors."""


class ConfigError(HvdcGridError):
    """Malformed or semantically invalid configuration input."""


class SpecValidationError(ConfigError):
    """One or more grid-spec invariants violated.

    Carries the full list of violations so a user can fix everything in
    one pass.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class SteadyStateError(HvdcGridError):
    """Newton solve for an operating point failed to converge."""

    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class ConsistencyError(HvdcGridError):
    """An assembled operating point does not satisfy the full model."""


class SingularityError(HvdcGridError):
    """Model evaluation hit a singular configuration (e.g. v_dc,f <= 0)."""


class NumericalError(HvdcGridError):
    """Eigensolver or other numerical routine failed."""


class DegenerateModeError(NumericalError):
    """Eigenvalue sensitivity requested for a (near-)repeated eigenvalue."""


class UnsupportedParameterError(HvdcGridError):
    """Parameter not in the supported sensitivity set."""


class SweepError(HvdcGridError):
    """Parameter sweep aborted (too many infeasible steps)."""


class NoBoundaryError(HvdcGridError):
    """No stability boundary inside the requested parameter range."""
