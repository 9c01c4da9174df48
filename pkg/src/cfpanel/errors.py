"""Exception hierarchy.

Config problems and data problems are kept apart so the command line can
map them to distinct exit codes.
"""


class CfPanelError(Exception):
    """Base class for all package errors."""


class ConfigError(CfPanelError):
    pass


class DataError(CfPanelError):
    """Anything wrong with the input data rather than the configuration."""


class SchemaError(DataError):
    pass


class IntegrityError(DataError):
    pass


class CoverageError(DataError):
    pass


class EmptyResultError(DataError):
    pass


class DomainError(DataError, ValueError):
    pass


class DegenerateSeriesError(DomainError):
    pass


class AlignmentError(DataError, ValueError):
    pass


class SampleSizeError(DataError, ValueError):
    pass


class CollinearityError(DataError):
    pass


class NumericalFailureError(CfPanelError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DependencyError(CfPanelError):
    """An upstream pipeline artifact is missing."""


class ConvergenceWarning(UserWarning):
    pass


class LeakageError(CfPanelError):
    """A fit received data from after its cutoff."""


class SkipThresholdError(CfPanelError):
    """Too many firms were skipped in a fit set."""
