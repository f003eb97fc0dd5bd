"""Exception hierarchy shared by every module.

The CLI maps these to exit codes: usage errors exit 1, data errors exit 2 and
numerical failures exit 3.
"""


class ESIHGNNError(Exception):
    exit_code = 1


class UsageError(ESIHGNNError):
    exit_code = 1


class DataError(ESIHGNNError):
    exit_code = 2


class ShapeError(DataError, ValueError):
    pass


class DomainError(DataError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class MissingFeatureError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing feature"


class NumericalError(ESIHGNNError, ArithmeticError):
    exit_code = 3
