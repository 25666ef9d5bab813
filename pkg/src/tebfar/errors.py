"""Exception hierarchy shared by every tebfar module."""


class TebfarError(Exception):
    """Base class for errors raised by tebfar."""


class NotPositiveDefinite(TebfarError, ValueError):
    pass


class DimensionMismatch(TebfarError, ValueError):
    pass


class LengthMismatch(DimensionMismatch):
    pass


class EmptyInput(TebfarError, ValueError):
    pass


class ConfigError(TebfarError, ValueError):
    pass


class RankDeficient(TebfarError, ValueError):
    pass


class SamplerError(TebfarError, RuntimeError):
    """A numeric failure inside a Gibbs sweep.

    ``state`` carries a snapshot of the chain at the failing iteration.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class MaxIterationsWarning(UserWarning):
    """An iterative solver stopped at its sweep limit before converging."""


# Data ingestion
class DataError(TebfarError, ValueError):
    pass


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row, column, value):
        super().__init__(f"cannot parse {value!r} at row {row}, column {column!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyAfterFiltering(DataError):
    pass


class ZeroVariance(DataError):
    def __init__(self, column):
        super().__init__(f"column {column!r} has zero variance")
        self.column = column


class InvalidSize(DataError):
    pass
