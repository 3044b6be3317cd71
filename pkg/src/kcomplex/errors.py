"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 2, ``NetworkError`` to 3 and
``UsageError`` to 1.
"""


class KComplexError(Exception):
    exit_code = 2


class UsageError(KComplexError):
    exit_code = 1


class ConfigError(UsageError):
    pass


class DataError(KComplexError):
    exit_code = 2


class ParseError(DataError):
    """One or more malformed input rows.

    ``problems`` is a list of ``(line_number, message)`` pairs, 1-based,
    counting the header as line 1.
    """

    def __init__(self, source, problems):
        self.source = str(source)
        self.problems = list(problems)
        shown = "; ".join(f"line {n}: {msg}" for n, msg in self.problems[:10])
        more = len(self.problems) - 10
        if more > 0:
            shown += f"; ... {more} more"
        super().__init__(f"{self.source}: {shown}")


class EmptyMatrixError(DataError):
    pass


class EmptyAdvantageError(EmptyMatrixError):
    pass


class PreconditionError(DataError):
    pass


class DegenerateSpectrumError(DataError):
    def __init__(self, eigenvalues):
        self.eigenvalues = [float(v) for v in eigenvalues]
        shown = ", ".join(repr(v) for v in self.eigenvalues[:6])
        super().__init__(f"second eigenvalue is not simple: leading eigenvalues [{shown}]")


class SingleClassError(DataError):
    pass


class DuplicateKeyError(DataError):
    pass


class StratumEmptyError(DataError):
    pass


class DegenerateRegressorError(DataError):
    pass


class InsufficientOverlapError(DataError):
    def __init__(self, message, unmatched=()):
        self.unmatched = sorted(unmatched)
        super().__init__(f"{message}; unmatched: {', '.join(self.unmatched) or '-'}")


class UnknownLabelError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NetworkError(KComplexError):
    exit_code = 3

    def __init__(self, message, status=None, cursor=None):
        self.status = status
        self.cursor = cursor
        super().__init__(message)


class UnsupportedPeriodError(NetworkError):
    pass


class HarvestError(NetworkError):
    pass
