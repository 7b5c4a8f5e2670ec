"""Exception hierarchy.

Every error carries a short ``code`` (its class name) and an ``exit_status``
used by the command-line entry point: 3 for bad input data, 4 for numeric
failures.
"""


class OrderflowError(Exception):
    exit_status = 3

    @property
    def code(self):
        return type(self).__name__


class DataError(OrderflowError):
    exit_status = 3


class NumericError(OrderflowError):
    exit_status = 4


# events
class MalformedRow(DataError):
    def __init__(self, line, reason):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class NonMonotonicTimestamp(DataError):
    pass


class EmptyStream(DataError):
    pass


# midprice / features
class NonPositiveHalflife(DataError):
    pass


class NoObservations(DataError):
    pass


class TimeRegression(DataError):
    pass


class NonPositiveInput(DataError):
    pass


class UndefinedMidprice(DataError):
    pass


class NegativeInterarrival(DataError):
    pass


# tokenizer
class InsufficientData(DataError):
    pass


class DegenerateFeature(DataError):
    pass


class SchemaUncalibrated(DataError):
    pass


class TokenOutOfRange(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class FormatVersionError(DataError):
    pass


class CorruptFile(DataError):
    pass


# simulator
class NonPositivePrice(DataError):
    pass


class EmptyOppositeSide(DataError):
    pass


class ClockRegression(DataError):
    pass


# baselines
class EmDegenerate(NumericError):
    pass


class NonStationaryParams(NumericError):
    pass


class NonConvergence(NumericError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# model
class IndexOutOfVocab(DataError):
    pass


class SequenceTooLong(DataError):
    pass


class NonFiniteLoss(NumericError):
    pass


class DivergedLoss(NumericError):
    pass


# rollout / eval
class HorizonZero(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class DegenerateVariance(NumericError):
    pass


class EmptySample(DataError):
    pass


class ZeroVariance(NumericError):
    pass


class NoFills(DataError):
    pass
