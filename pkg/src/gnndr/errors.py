"""Exception types raised by the package."""


class GnndrError(Exception):
    """Base class for all package errors."""

    code = "error"


class InvalidArgumentError(GnndrError, ValueError):
    code = "invalid-argument"


class InvalidStateError(GnndrError, RuntimeError):
    code = "invalid-state"


class CapacityExceededError(GnndrError, RuntimeError):
    code = "capacity-exceeded"


class DegeneratePosteriorError(GnndrError, ArithmeticError):
    """The observation has (numerically) zero probability under the model."""

    code = "degenerate-posterior"


class UnstableWeightsError(GnndrError, ArithmeticError):
    """Importance weights collapsed; raise the number of samples."""

    code = "unstable-weights"


class NumericalSingularityError(GnndrError, ArithmeticError):
    code = "numerical-singularity"


class InvalidFunctionError(GnndrError, ValueError):
    code = "invalid-function"


class ConfigError(GnndrError, ValueError):
    code = "config"
