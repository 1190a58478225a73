class ConfigError(ValueError):
    """Invalid experiment configuration or dataset layout."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(RuntimeError):
    """A linear solve failed or did not reach its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class SingularSystemError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass
