class EpictrlError(Exception):
    """Base class for errors raised by this package."""


class DomainError(EpictrlError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class PreconditionViolated(EpictrlError, ValueError):
    """An operation was called outside its documented region of validity."""


class StepRejected(EpictrlError, ArithmeticError):
    """An integration step left the simplex by more than the allowed slack."""


class HorizonExceeded(EpictrlError, RuntimeError):
    """The stop condition was not reached before ``max_time``."""


class IncompleteTrajectory(EpictrlError, ValueError):
    """The tail cost of a trajectory cannot be certified zero."""


class InfeasibleStart(EpictrlError, ValueError):
    """The initial infected fraction already exceeds the threshold."""


class CalibrationFailed(EpictrlError, RuntimeError):
    """No recovery rate in the scan grid reproduces the reference costs."""


class QuadratureError(EpictrlError, ArithmeticError):
    """Richardson check on a quadrature failed."""


class ConfigError(EpictrlError, ValueError):
    """A scenario or model description could not be parsed."""
