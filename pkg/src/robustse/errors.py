"""Exception types shared across the package."""


class RobustSEError(Exception):
    """Base class for all package errors."""


class RankDeficientError(RobustSEError):
    """The measurement matrix does not have full column rank."""


class NotConvergedError(RobustSEError):
    """An iterative method hit its iteration cap."""


class ParseError(RobustSEError):
    """Malformed input text."""

    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class ValidationError(RobustSEError):
    """Input parsed but violates a model invariant."""
