"""Exception hierarchy shared by every grmoe module.

Each failure mode named by the numerical operations maps to exactly one class
here, so callers (and the CLI exit-code mapping) can catch by kind.
"""

from __future__ import annotations

from typing import Optional


class GrmoeError(Exception):
    """Base class for all library errors."""


class RankDeficient(GrmoeError):
    """A factorization met a column whose residual norm fell below tolerance."""


class DimensionMismatch(GrmoeError, ValueError):
    pass


class NumericalError(GrmoeError):
    """Non-finite input or a floating-point result outside its valid range."""


class InvalidArgument(GrmoeError, ValueError):
    pass


class OutOfDomain(GrmoeError, ValueError):
    """Parameter lies outside the regime an evaluator supports."""


class ConvergenceFailure(GrmoeError):
    pass


class AssumptionViolated(GrmoeError):
    """Hypothesis of a bound does not hold for the supplied quantities."""


class CalibrationFailure(GrmoeError):
    pass


class ConfigError(GrmoeError):
    pass


class Diverged(GrmoeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: Optional[str] = None) -> None:
        self.step = int(step)
        super().__init__(message or f"non-finite loss at step {self.step}")
