"""Exception hierarchy shared across the package."""


class SuptenError(Exception):
    """Base class for all package errors."""


class DataError(SuptenError):
    """Bad input data or configuration (CLI exit code 2)."""


class NumericalError(SuptenError):
    """A numerical routine could not produce a result (CLI exit code 3)."""


class DimensionMismatch(DataError, ValueError):
    pass


class BadK(DataError, ValueError):
    pass


class BadRank(DataError, ValueError):
    pass


class BadPlan(DataError, ValueError):
    pass


class BadSpec(DataError, ValueError):
    pass


class ConfigError(DataError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class DuplicateTriple(ParseError):
    pass


class EmptyDataset(DataError):
    pass


class ZeroMatrix(NumericalError):
    pass


class NotConverged(NumericalError):
    """Raised when an iteration hits its cap; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularSystem(NumericalError):
    pass


class ZeroCovariance(NumericalError):
    pass


class NonFinite(NumericalError):
    pass
