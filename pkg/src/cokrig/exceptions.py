"""Exception types shared across the package."""


class CokrigError(Exception):
    """Base class for all package errors."""


class DataError(CokrigError):
    """Malformed input data or violated data invariants."""


class NumericalError(CokrigError):
    """Numerical failure: certificate failure, singular matrix, factorization."""


class ConfigError(CokrigError):
    """Invalid run configuration. Carries the full list of problems found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
