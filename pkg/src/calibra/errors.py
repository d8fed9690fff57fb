"""Exception types shared across the package."""


class CalibraError(Exception):
    """Base class for all package errors."""


class DomainError(CalibraError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(CalibraError, ValueError):
    """A structural precondition (ordering, shape, monotonicity) was violated."""


class DegenerateInputError(CalibraError, ValueError):
    """The data make a derived quantity undefined (e.g. the AR weight)."""


class NonPositiveSigmaError(DomainError):
    """A variance model predicted a non-positive standard deviation.

    Attributes:
        x: the offending input(s).
    """

    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class FitError(CalibraError, RuntimeError):
    """Every attempt of a fitting routine failed; ``diagnostics`` holds details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
