"""Exception hierarchy shared by all phdim modules."""


class PhdimError(Exception):
    """Base class for every error raised by this package."""


class InvalidMapSpec(PhdimError, ValueError):
    pass


class OnSingularity(PhdimError):
    """Point lies within the geometric tolerance of the singularity set."""


class OutsideDomain(PhdimError):
    pass


class ImageEscapesDomain(PhdimError):
    pass


class OrbitEscaped(PhdimError):
    pass


class DegenerateImage(PhdimError):
    """Some matrix of an interval family maps a cone direction to the horizontal."""


class CriterionInapplicable(DegenerateImage):
    pass


class InvalidForRhoZero(PhdimError, ValueError):
    pass


class NotFound(PhdimError):
    pass


class ConeViolation(PhdimError):
    pass


class InsufficientData(PhdimError):
    pass


class InsufficientPoints(InsufficientData):
    pass


class BudgetExceeded(PhdimError):
    pass


class SignError(PhdimError, ValueError):
    pass


class DomainError(PhdimError, ValueError):
    pass


class Inconclusive(PhdimError):
    """Raised when an s-scan cannot place a single classification boundary."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table or []
