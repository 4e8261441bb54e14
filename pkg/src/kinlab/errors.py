"""Exception types shared across kinlab."""


class KinlabError(Exception):
    """Base class for all kinlab failures."""


class ArgumentError(KinlabError, ValueError):
    pass


class ConfigError(KinlabError, ValueError):
    pass


class NumericError(KinlabError, ArithmeticError):
    """Non-finite value produced by an evaluation.

    Carries the offending state when it is known.
    """

    def __init__(self, msg, t=None, x=None, s=None):
        super().__init__(msg)
        self.t = t
        self.x = x
        self.s = s


class ConvergenceError(NumericError):
    pass


class StepSizeError(NumericError):
    def __init__(self, msg, admissible_dt=None):
        super().__init__(msg)
        self.admissible_dt = admissible_dt


class DomainError(NumericError):
    pass


class FormulaValidationError(NumericError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


class LinearSolveError(NumericError):
    pass


class SpectralAnomalyError(NumericError):
    def __init__(self, msg, eigenvalue=None):
        super().__init__(msg)
        self.eigenvalue = eigenvalue


class ContinuationError(NumericError):
    pass


class SizeError(KinlabError, ValueError):
    pass


class ScheduleError(KinlabError, ValueError):
    pass
