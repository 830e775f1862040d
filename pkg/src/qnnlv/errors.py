"""Exception types shared across the package.

Each class carries the CLI exit code it maps to; anything without a
dedicated code exits with 1.
"""

from __future__ import annotations


class QnnlvError(Exception):
    exit_code = 1


class ConfigError(QnnlvError, ValueError):
    exit_code = 2


class ResourceError(QnnlvError):
    exit_code = 3


class DivergenceError(QnnlvError):
    exit_code = 4

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class InvalidSizeError(QnnlvError, ValueError):
    pass


class NormalizationError(QnnlvError, ValueError):
    pass


class ShapeError(QnnlvError, ValueError):
    pass


class IntegrityError(QnnlvError):
    pass


class HermiticityError(QnnlvError):
    pass


class InsufficientDataError(QnnlvError, ValueError):
    pass


class InvalidParameterError(QnnlvError, ValueError):
    pass


class DomainError(QnnlvError, ValueError):
    pass


class FitQualityError(QnnlvError):
    pass


class DegenerateSeriesError(QnnlvError, ValueError):
    pass


class AlignmentError(QnnlvError, ValueError):
    pass


class NumericError(QnnlvError):
    pass


class RangeError(QnnlvError, ValueError):
    pass
