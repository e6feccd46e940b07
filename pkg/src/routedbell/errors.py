"""Exception hierarchy shared by all modules."""


class RoutedBellError(Exception):
    """Base class for all package errors."""


class DomainError(RoutedBellError, ValueError):
    """A parameter lies outside the range an operation accepts."""


class IncompatibleScenarioError(RoutedBellError, ValueError):
    """Two objects refer to scenarios with different cardinalities."""


class MissingMomentError(RoutedBellError, ValueError):
    """An expression needs a moment the correlation data cannot provide."""


class InvalidInputError(RoutedBellError, ValueError):
    """Input data violates a precondition (e.g. already contains no-click)."""


class TooLargeError(RoutedBellError, ValueError):
    """A configured size guard was exceeded."""


class LevelTooLowError(RoutedBellError, ValueError):
    """The relaxation level lacks a monomial that an expression needs."""


class UnsupportedQueryError(RoutedBellError, ValueError):
    """The query cannot be expressed in the requested form."""


class SolverError(RoutedBellError, RuntimeError):
    """The SDP solver could not return a usable answer."""
