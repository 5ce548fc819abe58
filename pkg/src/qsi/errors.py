"""Exception hierarchy shared by every module.

Each class carries the process exit code the command line front-end maps it to.
"""


class QsiError(Exception):
    exit_code = 1


class DomainError(QsiError, ValueError):
    """An argument is outside the range an operation is defined on."""

    exit_code = 2


class GeometryError(QsiError, ValueError):
    """Pixel grids, kernels or beam profiles do not fit together."""

    exit_code = 2


class ConfigurationError(QsiError, ValueError):
    exit_code = 2


class StatisticsError(QsiError, ValueError):
    """Too few samples to form the requested statistic."""

    exit_code = 4


class DegenerateError(QsiError, ArithmeticError):
    """A denominator collapsed below its tolerance."""

    exit_code = 4


class FormatError(QsiError):
    """A file does not follow its binary or text layout."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
