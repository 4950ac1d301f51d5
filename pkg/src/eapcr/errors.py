"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/data problems exit 1,
numeric failures exit 2 (see ``eapcr.cli``).
"""


class EapcrError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EapcrError):
    """Invalid configuration value (split spec, sweep axis, model dims, ...)."""


class SchemaError(EapcrError):
    """Dataset file does not match its declared schema."""


class DataError(EapcrError):
    """A concrete cell/row is unusable (missing value, unparseable number)."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class FitError(EapcrError):
    """Pipeline fitting failed (empty input, fewer values than bins, ...)."""


class ImputationError(EapcrError):
    """Nearest-neighbour imputation could not find usable donor rows."""


class DimensionError(EapcrError):
    """Shape contract violated; the message names the offending shapes."""


class IndexLookupError(EapcrError):
    """Embedding/row lookup out of range; carries the index and table size."""

    def __init__(self, index: int, size: int):
        super().__init__(f"index {index} out of range for table with {size} rows")
        self.index = index
        self.size = size


class GraphConsumedError(EapcrError):
    """backward() called again on a graph whose tape has already been replayed."""


class GraphStateError(EapcrError):
    """Loss tensor was not produced under the graph it is being differentiated on."""


class NumericError(EapcrError):
    """Non-finite value produced where the contract requires finite data."""


class SolverError(EapcrError):
    """Dense linear solve failed (singular system)."""


class UndefinedMetricError(EapcrError):
    """Metric has no defined value (e.g. R^2 with zero target variance)."""


class CheckpointFormatError(EapcrError):
    """Checkpoint magic/version not recognised; nothing was loaded."""


class CheckpointIntegrityError(EapcrError):
    """Checkpoint payload truncated or does not match its recorded digest."""
