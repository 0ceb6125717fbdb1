"""Exception hierarchy.

Two families are distinguished so that callers (and the command line) can
tell bad input apart from numerical breakdown:

* :class:`ValidationError` -- malformed or inadmissible input
  (subclasses :class:`ValueError`).
* :class:`NumericalError` -- a well-formed problem that cannot be solved
  numerically (subclasses :class:`numpy.linalg.LinAlgError`).
"""

import numpy as np


class PMORError(Exception):
    """Base class of all errors raised by this package."""


class ValidationError(PMORError, ValueError):
    """Input does not satisfy a documented precondition."""


class NumericalError(PMORError, np.linalg.LinAlgError):
    """A numerical procedure broke down."""


# -- validation failures ----------------------------------------------------

class NotSPD(ValidationError):
    """Matrix is not symmetric positive definite."""


class NegativeParameter(ValidationError):
    """Negative parameter passed to a system in ``'sqrt'`` parameter mode."""


class OrderTooLarge(ValidationError):
    """Requested reduced order exceeds the state dimension."""


class NotEnoughSamples(ValidationError):
    """Too few frequency samples for the requested rational degree."""


class ParseError(ValidationError):
    """Malformed Matrix Market file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionMismatch(ValidationError):
    """Array dimensions are inconsistent (or a file is truncated)."""


class NotDiagonal(ValidationError):
    """A matrix expected to be diagonal has off-diagonal entries."""


# -- numerical failures -----------------------------------------------------

class UnstablePencil(NumericalError):
    """The pencil ``(A, E)`` has an eigenvalue with nonnegative real part."""


class SingularE(NumericalError):
    """The descriptor matrix ``E`` is numerically singular."""


class ResolventSingular(NumericalError):
    """``s E - A`` is singular at the requested point."""


class CouplingSingular(NumericalError):
    """The ``k x k`` coupling matrix of the SMW formula is singular."""


class EvaluationFailure(NumericalError):
    """A frequency-response evaluator failed on the requested grid."""


class DegenerateLS(NumericalError):
    """The least-squares problem of vector fitting is rank deficient."""


class _BudgetError(NumericalError):
    """Budget exhaustion; ``report`` holds the partial optimization report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class MaxEvaluations(_BudgetError):
    """Optimizer exhausted its objective evaluation budget."""


class TimeBudgetExceeded(MaxEvaluations):
    """Optimizer exhausted its wall-clock budget."""


class SurrogateUnstable(NumericalError):
    """The assembled reduced realization is unstable at the given parameter."""


class MaxOuterIterations(_BudgetError):
    """A surrogate optimization loop exceeded its outer-iteration budget."""


__all__ = ["PMORError", "ValidationError", "NumericalError", "NotSPD", "NegativeParameter",
           "OrderTooLarge", "NotEnoughSamples", "ParseError", "DimensionMismatch", "NotDiagonal",
           "UnstablePencil", "SingularE", "ResolventSingular", "CouplingSingular",
           "EvaluationFailure", "DegenerateLS", "MaxEvaluations", "TimeBudgetExceeded",
           "SurrogateUnstable", "MaxOuterIterations"]
