"""Exception hierarchy shared across the package."""


class CxrError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(CxrError):
    """A file does not conform to its documented format."""


class ConfigError(CxrError):
    """Invalid configuration or hyperparameter values."""


class HierarchyError(CxrError):
    """Label hierarchy is malformed or inconsistent with its registry."""


class AlignmentError(CxrError):
    """Sample identifiers of two datasets cannot be reconciled."""


class DataError(CxrError):
    """Input data violates an operation's preconditions."""


class DegenerateTruthError(DataError):
    """Ground truth contains only one class, so ranking metrics are undefined."""
