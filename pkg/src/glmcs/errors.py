"""Exception hierarchy.

Argument and configuration problems subclass ``ValueError``; numerical
failures subclass ``ArithmeticError`` so callers (and the CLI) can map them
to distinct exit codes.
"""


class GlmcsError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(GlmcsError, ValueError):
    pass


class DomainError(GlmcsError, ValueError):
    """A label lies outside the family's support."""


class UnsupportedDimensionError(GlmcsError, ValueError):
    pass


class ConfigError(GlmcsError, ValueError):
    pass


class NumericalError(GlmcsError, ArithmeticError):
    """Base for failures of a numerical routine."""

    def __init__(self, message, operation=None):
        super().__init__(message)
        self.operation = operation


class ConvergenceError(NumericalError):
    pass


class AccuracyError(NumericalError):
    pass


class NumericalUnderflowError(NumericalError):
    pass


class StrongConvexityUnavailableError(NumericalError):
    """m(b) = 0 (or was given as <= 0), so the strongly convex sets are undefined."""
