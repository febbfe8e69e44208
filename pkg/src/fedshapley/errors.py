"""Error taxonomy shared across the package."""


class FedShapleyError(Exception):
    """Base class for package errors."""


class ConfigurationError(FedShapleyError):
    """A user-supplied configuration value is invalid."""


class ContractError(FedShapleyError):
    """An operation was called with arguments violating its contract."""


class IngestionError(FedShapleyError):
    """A data file could not be ingested; message carries row/column context."""
