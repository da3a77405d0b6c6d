"""Exception types shared across the package."""


class PscglError(Exception):
    """Base class for all errors raised by this package."""


class IngestionError(PscglError):
    """A required dataset file is missing or unreadable."""


class FormatError(PscglError):
    """A dataset file is malformed; the message carries file and line context."""


class ValidationError(PscglError):
    """Data violates a declared constraint (e.g. non-binary feature values)."""


class UnusableDatasetError(PscglError):
    """Filtering left too few classes to form any task."""


class SplitError(PscglError):
    """A class is too small to populate train/val/test splits."""


class ContractViolation(PscglError):
    """A caller broke a documented precondition."""


class ConfigError(PscglError):
    """An experiment config file could not be parsed; message names the key."""


class NoDataError(PscglError):
    """A results directory holds no records to report on."""
