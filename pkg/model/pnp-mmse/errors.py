class NumericalFailure(RuntimeError):
    """A computation produced a non-finite value or failed to converge."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigurationError(ValueError):
    pass


class FailureBudgetExceeded(RuntimeError):
    def __init__(self, failed, total):
        super().__init__(f"{failed} of {total} trials failed")
        self.failed = failed
        self.total = total
