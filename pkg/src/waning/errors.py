"""Exception hierarchy.

Every exception carries an ``exit_code`` used by the command line:
2 for bad input data or configuration, 3 when the data are well formed but
an estimator is undefined on them.
"""


class WaningError(Exception):
    """Base class for all library errors."""

    exit_code = 4


class DataError(WaningError, ValueError):
    exit_code = 2


class DegeneracyError(WaningError, ArithmeticError):
    exit_code = 3


class ParseError(DataError):
    """A field could not be parsed. Carries the 1-based row and column name."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SchemaError(DataError):
    pass


class ConfigError(DataError):
    pass


class InvalidProbabilities(ConfigError):
    pass


class ZeroPersonTime(DataError):
    pass


class EmptyRiskSet(DataError):
    pass


class HazardOutOfRange(DataError):
    pass


class HorizonExceeded(DataError):
    pass


class MissingCI(DataError):
    pass


class MissingVariance(DataError):
    pass


class ZeroEvents(DegeneracyError):
    pass


class NoEvents(DegeneracyError):
    pass


class ZeroDenominator(DegeneracyError):
    """A ratio estimator hit a zero denominator; ``name`` identifies it."""

    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"zero denominator: {name} = 0")


class NonMonotoneIncidence(DegeneracyError):
    pass


class DegenerateVE(DegeneracyError):
    pass


class TransformUnavailable(DegeneracyError):
    pass


class Separation(DegeneracyError):
    pass


class NonConvergence(DegeneracyError):
    pass


class TooManyFailedResamples(DegeneracyError):
    pass


class RareEventWarning(UserWarning):
    """Cumulative hazards are too large for the rare-event formulas to be trusted."""
