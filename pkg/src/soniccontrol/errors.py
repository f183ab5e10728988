"""Exception hierarchy shared by all modules.

The CLI maps these onto its exit-code contract: validation problems
exit 1, numerical failures exit 2, a failed controllability
certification exits 3, and a run whose tolerances were not met exits 4.
"""


class SonicControlError(Exception):
    """Base class for all library errors."""


class ValidationError(SonicControlError):
    """Bad inputs: parameters, configuration, or data files."""


class InvalidParams(ValidationError):
    pass


class Unsupported(ValidationError):
    """Requested a combination the model catalog does not provide."""


class EquilibriumNotSonic(ValidationError):
    """The requested equilibrium does not have a vanishing speed."""


class OutOfDomain(ValidationError):
    """A state (or a finite-difference stencil around it) leaves the box."""


class SonicFamilyForbidden(ValidationError):
    """An operation restricted to non-sonic families was asked for family m."""


class NumericalError(SonicControlError):
    """A computation started from valid inputs but failed or broke down."""


class ComplexOrRepeatedEigenvalues(NumericalError):
    pass


class LeftDomain(NumericalError):
    """A trajectory or grid solution escaped the domain box.

    ``exit_parameter`` holds the (approximate) parameter or time at
    which the exit was detected, when known.
    """

    def __init__(self, message, exit_parameter=None):
        super().__init__(message)
        self.exit_parameter = exit_parameter


class BlowUp(NumericalError):
    """ODE step size underflowed; the solution is likely singular."""


class NoConvergence(NumericalError):
    pass


class Focusing(NumericalError):
    """Simple-wave characteristics cross inside the requested time span."""


class MiddleNotSonicFree(NumericalError):
    """The middle plateau state still has a (near-)vanishing speed."""


class CFLViolation(NumericalError):
    pass


class GradientBlowup(NumericalError):
    """The C1 norm of a grid solution exceeded the safety bound."""


class SonicInside(NumericalError):
    """Sideways marching found a near-zero speed on the grid."""


class MatchFailure(NumericalError):
    """The middle matching step missed its endpoint data."""


class HypothesisNotCertified(SonicControlError):
    """Controllability certification failed (CLI exit 3)."""


class ToleranceNotMet(SonicControlError):
    """A finished run violated its accuracy targets (CLI exit 4).

    Carries the achieved numbers so callers can still inspect and
    persist the artifacts.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics
