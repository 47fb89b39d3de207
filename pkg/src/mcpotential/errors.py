"""Exception hierarchy shared by all modules."""


class PotentialError(Exception):
    """Base class for library errors."""


class ValidationError(PotentialError, ValueError):
    pass


class RowSumViolation(ValidationError):
    pass


class NegativeRate(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class SingularSystem(PotentialError):
    pass


class NonPositiveF(PotentialError):
    pass


class LayoutMismatch(ValidationError):
    pass


class ScheduleError(ValidationError):
    pass


class ModelMismatch(ValidationError):
    pass


class UnknownCurrency(ValidationError, KeyError):
    pass


class MissingSpot(ValidationError, KeyError):
    pass


class NonPositiveQuote(ValidationError):
    pass


class Degenerate(PotentialError):
    """Every particle carries zero weight."""


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValidationError):
    pass


class CrossedQuote(ParseError):
    pass


class Misaligned(ValidationError):
    pass
