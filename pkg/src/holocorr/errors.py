"""Exception and warning types shared across the package."""


class HoloCorrError(Exception):
    """Base class for all errors raised by holocorr."""


class ValidationError(HoloCorrError, ValueError):
    """Malformed input: bad correspondence, bad cloud, bad config."""


class NumericalError(HoloCorrError, ArithmeticError):
    """A numeric routine failed to reach its accuracy target."""


class RootFindingError(NumericalError):
    def __init__(self, message, best_residual=None, component=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.component = component


class ConditioningError(NumericalError):
    def __init__(self, message, condition_estimate=None):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class InconsistencyError(NumericalError):
    """Two independent deciders disagreed. Always a bug."""


class CapExceededError(HoloCorrError):
    """A size guard (tree size, degree, enumeration) was exceeded."""


class TreeTooLargeError(CapExceededError):
    pass


class DegreeCapError(CapExceededError):
    pass


class HoloCorrWarning(UserWarning):
    pass


class ExceptionalPointWarning(HoloCorrWarning):
    """Start point is on the heuristic list of exceptional points."""


class DegreeHypothesisWarning(HoloCorrWarning):
    """Topological degree does not exceed the forward degree."""


class ReducibilityWarning(HoloCorrWarning):
    """A component looks non-reduced (repeated roots along a random line)."""
