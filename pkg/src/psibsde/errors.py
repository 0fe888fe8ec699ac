"""Exception hierarchy shared by all modules."""


class PsiBSDEError(Exception):
    pass


class DomainError(PsiBSDEError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class InfeasibleSplitError(DomainError):
    pass


class HypothesisError(PsiBSDEError, ValueError):
    """A standing hypothesis (e.g. mu above the critical value) fails."""


class CapacityError(PsiBSDEError, MemoryError):
    pass


class StepSizeError(PsiBSDEError, ValueError):
    pass


class ConditioningError(PsiBSDEError, ArithmeticError):
    pass


class ConvergenceError(PsiBSDEError, ArithmeticError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class ConfigError(PsiBSDEError, ValueError):
    pass
