"""Exception types shared across the package."""


class BlupcalError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BlupcalError):
    """Invalid configuration file or scenario parameterization."""


class DataError(BlupcalError):
    """Malformed or statistically unusable input data."""


class IdentifiabilityError(DataError):
    """The requested model cannot be identified from the data provided."""


class RankDeficientError(BlupcalError):
    """Design matrix is rank deficient.

    ``column`` is the 0-based index of the first column that the pivoted
    factorization found to be linearly dependent on earlier columns.
    """

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient (column {column})")
