"""
Typed errors for the DRSS estimation library.

Every error raised by the library derives from DrssError. Errors pick up
context (fold, rep, cell, split, row, ...) while they propagate, so a failure
deep inside a Monte Carlo campaign still names where it happened.
"""
from typing import Any, List, Tuple


class DrssError(Exception):
    """Base class for all library errors."""

    exit_code = 2

    def __init__(self, message: str = "", **context: Any):
        super().__init__(message)
        self.message = message
        self.context: List[Tuple[str, Any]] = list(context.items())

    def annotate(self, **context: Any) -> "DrssError":
        """Prepend context so the outermost scope reads first; returns self."""
        self.context = list(context.items()) + self.context
        return self

    def context_dict(self) -> dict:
        return dict(self.context)

    def __str__(self) -> str:
        if not self.context:
            return self.message
        tags = " ".join(f"{key}={value}" for key, value in self.context)
        return f"[{tags}] {self.message}"


class DimensionMismatch(DrssError, ValueError):
    pass


class NonFiniteCovariate(DrssError, ValueError):
    pass


class MissingLabeledOutcome(DrssError, ValueError):
    pass


class EmptyLabeledSet(DrssError, ValueError):
    pass


class InvalidIndicator(DrssError, ValueError):
    """A label, treatment or stratum vector holds values other than 0/1."""


class InvalidFoldCount(DrssError, ValueError):
    pass


class RankDeficientDesign(DrssError, ArithmeticError):
    pass


class EmptyGrid(DrssError, ValueError):
    pass


class NumericallySingularGram(DrssError, ArithmeticError):
    pass


class NoLabeledInTrainingFold(DrssError, ValueError):
    pass


class Separation(DrssError, ArithmeticError):
    """Newton iterations diverged or the Hessian became singular."""


class EmptyStratum(DrssError, ValueError):
    pass


class NonpositivePropensity(DrssError, ValueError):
    pass


class DegeneratePropensityOne(DrssError, ValueError):
    pass


class SingularJacobian(DrssError, ArithmeticError):
    pass


class InvalidAlpha(DrssError, ValueError):
    pass


class UnsupportedAdjustment(DrssError, ValueError):
    """No adjusted influence function exists for the propensity model in use."""


class EmptyArmInTrainingFold(DrssError, ValueError):
    pass


class CalibrationNotBracketed(DrssError, ArithmeticError):
    pass


class InvalidSpec(DrssError, ValueError):
    pass


class SchemaViolation(DrssError, ValueError):
    pass


class ParseError(DrssError, ValueError):
    pass


class ConfigError(DrssError, ValueError):
    """Bad configuration or command line usage."""

    exit_code = 1
