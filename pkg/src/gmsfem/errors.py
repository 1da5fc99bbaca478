"""Exception hierarchy shared by all modules."""


class GMsFEMError(Exception):
    pass


class InvalidArgument(GMsFEMError, ValueError):
    pass


class ConfigError(GMsFEMError, ValueError):
    """Experiment configuration is malformed or inconsistent."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class RasterError(GMsFEMError, ValueError):
    pass


class NumericalError(GMsFEMError, RuntimeError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None, iterations=None):
        self.residual = residual
        self.iterations = iterations
        super().__init__(message)


class CoercivityError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, message, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class EmptyBasisError(GMsFEMError, ValueError):
    pass


class ExperimentError(GMsFEMError):
    """A module failure inside an experiment run, with the stage that failed."""

    def __init__(self, context, cause):
        self.context = context
        self.cause = cause
        super().__init__(f"{context}: {type(cause).__name__}: {cause}")
