"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class CoparError(Exception):
    """Base class for package errors."""


class DomainError(CoparError, ValueError):
    """A parameter or argument lies outside its admissible domain."""


class FitError(CoparError, RuntimeError):
    """Estimation failed (degenerate data, optimizer breakdown)."""


class NumericalError(CoparError, ArithmeticError):
    """A numerical routine failed to converge."""


class IngestError(CoparError, ValueError):
    """Input data could not be parsed."""
