"""Exception hierarchy.

Every error raised by the package derives from :class:`ControlError`, which
carries the name of the module that raised it and a ``witness`` dictionary
with the data that triggered the failure.  The command-line runner relies on
both to produce a machine-readable error report.
"""

from __future__ import annotations


class ControlError(Exception):
    """Base class for all package errors."""

    module = "bilinear_control"

    def __init__(self, message, **witness):
        super().__init__(message)
        self.witness = witness

    def to_dict(self):
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": str(self),
            "witness": self.witness,
        }


class InvalidIndexError(ControlError, ValueError):
    module = "spectral_core"


class DomainError(ControlError, ValueError):
    module = "spectral_core"


class DegenerateFamilyError(ControlError, ValueError):
    """Raised by Gram-Schmidt when a member is (numerically) dependent."""

    module = "spectral_core"

    def __init__(self, message, index, **witness):
        super().__init__(message, index=index, **witness)
        self.index = index


class EvaluationError(ControlError, ValueError):
    module = "operators"


class BranchTrackingError(ControlError):
    module = "perturbation"


class GapCollapseError(ControlError):
    module = "perturbation"


class NumericError(ControlError, FloatingPointError):
    module = "propagator"


class InvalidSignalError(ControlError, ValueError):
    module = "propagator"


class ResonanceError(ControlError):
    """Two transition frequencies coincide.

    ``collisions`` lists every colliding pair of labels that was found, the
    first of which is also quoted in the message.
    """

    module = "moment_solver"

    def __init__(self, message, collisions=(), **witness):
        collisions = [tuple(map(_plain, c)) for c in collisions]
        super().__init__(message, collisions=collisions, **witness)
        self.collisions = collisions


class IllPosedError(ControlError):
    module = "moment_solver"


class LostPhaseError(ControlError):
    module = "local_control"


class DivergenceError(ControlError):
    """Newton iteration failed; ``history`` holds the defect per iteration."""

    module = "local_control"

    def __init__(self, message, history=(), **witness):
        super().__init__(message, history=list(history), **witness)
        self.history = list(history)


class NoChainError(ControlError):
    module = "global_control"


class BudgetError(ControlError):
    module = "global_control"

    def __init__(self, message, best_error, **witness):
        super().__init__(message, best_error=best_error, **witness)
        self.best_error = best_error


class ValidationError(ControlError, ValueError):
    module = "bilinear_control"

    def __init__(self, message, module=None, **witness):
        super().__init__(message, **witness)
        if module is not None:
            self.module = module


def _plain(x):
    # index labels may arrive as numpy integers or nested tuples
    if isinstance(x, tuple):
        return tuple(_plain(y) for y in x)
    try:
        return int(x)
    except (TypeError, ValueError):
        return x
