"""Exception and warning types shared across the package."""


class FedRecError(Exception):
    """Base class for every error raised by fedrec."""


class DataError(FedRecError):
    """Input data is missing, malformed or degenerate."""


class MissingColumn(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyAfterFilter(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class DegenerateLabelsWarning(UserWarning):
    pass


class EmptyClient(DataError):
    pass


class EmptyDataset(DataError):
    pass


class EmptyCounts(DataError):
    pass


class EmptySeries(DataError):
    pass


class ShapeMismatch(FedRecError, ValueError):
    pass


class LengthMismatch(FedRecError, ValueError):
    pass


class IndexOutOfRange(FedRecError, IndexError):
    pass


class FeatureMismatch(FedRecError, ValueError):
    pass


class DegenerateLeaf(FedRecError, ArithmeticError):
    pass


class EmptyUpdates(FedRecError, ValueError):
    pass


class NotEnoughClients(FedRecError):
    pass


class MissingRun(FedRecError):
    pass


class ConfigError(FedRecError, ValueError):
    pass
