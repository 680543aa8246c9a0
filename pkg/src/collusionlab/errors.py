"""Exception hierarchy shared by all modules."""


class CollusionLabError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(CollusionLabError, ValueError):
    pass


class UnsupportedConfigurationError(CollusionLabError, NotImplementedError):
    pass


class InvalidParameterizationError(CollusionLabError, ValueError):
    pass


class InvalidAssignmentError(CollusionLabError, ValueError):
    pass


class SolverError(CollusionLabError, RuntimeError):
    """An equilibrium solver failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class ConfigError(CollusionLabError, ValueError):
    """Configuration could not be parsed or failed validation.

    ``problems`` lists every violated constraint, not just the first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
