"""Exception hierarchy shared across the package.

The split between :class:`ConfigError`, :class:`DataError` and
:class:`DivergenceError` mirrors the CLI exit codes (2, 3 and 4).
"""


class RafniError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RafniError, ValueError):
    """A configuration value or argument is outside its allowed range."""


class DataError(RafniError, ValueError):
    """The supplied data cannot be used (malformed, incomplete, degenerate)."""


class InsufficientDataError(DataError):
    """Too few values to fit the loss mixture (fewer than 4)."""


class DegenerateDataError(DataError):
    """All values identical; the loss mixture has no structure to fit."""


class StratificationInfeasibleError(DataError):
    """A class has fewer members than the number of requested folds."""


class AuditUnavailableError(DataError):
    """Clean labels are missing for an instance referenced by the action log."""


class DivergenceError(RafniError, RuntimeError):
    """Training produced a non-finite loss."""


class DesyncError(RafniError, RuntimeError):
    """Snapshot instance ids do not match the controller's active set.

    This indicates a programming fault in the training loop and aborts the run.
    """
