"""Exception hierarchy.

Validation problems (bad inputs, malformed files) derive from
``ValidationError``; failures of the numerical machinery derive from
``NumericalError``. The CLI maps them to exit codes 2 and 3.
"""


class MislinkError(Exception):
    pass


class ValidationError(MislinkError, ValueError):
    pass


class NumericalError(MislinkError, ArithmeticError):
    pass


class InvalidRates(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class MissingTruth(ValidationError):
    pass


class MissingRates(ValidationError):
    pass


class TooLarge(ValidationError):
    pass


class EmptyPhiCell(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class IntegrityError(ValidationError):
    pass


class UnknownColumn(ValidationError):
    pass


class VersionError(ValidationError):
    pass


class IoError(ValidationError):
    """A file could not be read or written."""


class SingularSystem(NumericalError):
    pass


class RankDeficient(NumericalError):
    def __init__(self, message, matrix=None):
        self.matrix = matrix
        super().__init__(message)


class NoVariation(NumericalError):
    pass


class NegativeDiscriminant(NumericalError):
    pass


class DegenerateRates(NumericalError):
    pass


class RatesFlagged(NumericalError):
    """A rate estimate fell outside its admissible range."""


class AllReplicationsFailed(NumericalError):
    pass
