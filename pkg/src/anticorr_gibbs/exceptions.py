"""Exception hierarchy shared by all samplers."""


class AnticorrError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(AnticorrError, ValueError):
    """An argument violates a documented precondition."""


class NumericError(AnticorrError, ArithmeticError):
    """A numerical routine failed (NaN, non-convergence, breakdown)."""

    def __init__(self, message, point=None, diagnostics=None):
        super().__init__(message)
        self.point = point
        self.diagnostics = diagnostics or {}


class DefinitenessError(NumericError):
    """A matrix expected to be positive definite is not."""


class ConfigError(AnticorrError, ValueError):
    """Run configuration is inconsistent."""


class DegenerateChainWarning(UserWarning):
    """A chain is constant, so autocorrelation-based diagnostics are undefined."""
