"""Exception hierarchy for the sqzbath package."""


class SqzbathError(Exception):
    """Base class for all package errors."""


class DimensionError(SqzbathError):
    """Invalid Hilbert-space dimension (e.g. a mode with dim < 2)."""


class ShapeError(SqzbathError):
    """Operator/state shape or space mismatch."""


class ParameterError(SqzbathError):
    """Physically invalid parameter value (negative rate, nbar < 0, ...)."""


class DegenerateParametersError(ParameterError):
    """Parameter combination where a formula degenerates (e.g. r = 0 exactly)."""


class ConsistencyError(SqzbathError):
    """An internal identity that must hold failed (numerical pathology)."""


class NoSolutionError(SqzbathError):
    """An inverse-design problem has no solution for the given inputs."""


class IntegrationError(SqzbathError):
    """Time integration failed (step-size underflow, NaNs, ...)."""


class ConvergenceError(SqzbathError):
    """Iterative procedure did not converge within its budget."""


class InstabilityError(SqzbathError):
    """Dynamics detected as unstable, or a model flagged unstable was run."""


class UnfittableError(SqzbathError):
    """A data window cannot be fitted (sign changes, underflow, ...)."""


class ConfigError(SqzbathError):
    """Run configuration failed validation."""
