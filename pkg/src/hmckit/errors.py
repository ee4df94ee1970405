"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, finiteness, range)."""


class ConfigurationError(ValueError):
    """A sampler or experiment was configured with invalid settings."""


class UnsupportedConfiguration(ConfigurationError):
    """The requested operation exists only for a narrower class of inputs."""


class DatasetError(ValueError):
    """Base class for dataset ingestion failures."""


class DatasetNotFound(DatasetError, FileNotFoundError):
    pass


class MissingColumnError(DatasetError):
    pass


class MissingValueError(DatasetError):
    def __init__(self, row, column):
        self.row = row
        self.column = column
        super().__init__(f"missing value at row {row}, column {column!r}")


class NonBinaryResponseError(DatasetError):
    pass


class EstimationError(ValueError):
    """Mass-matrix estimation could not produce a positive definite result."""


class DegenerateSeriesError(ValueError):
    """A diagnostic was requested for a constant (zero-variance) series."""
