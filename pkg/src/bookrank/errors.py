"""Exception hierarchy shared by all pipeline stages."""


class BookrankError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BookrankError, ValueError):
    pass


class ParseError(BookrankError, ValueError):
    def __init__(self, line: int, field: str, message: str):
        self.line = line
        self.field = field
        super().__init__(f"line {line}: field {field!r}: {message}")


class IntegrityError(BookrankError, ValueError):
    pass


class LookupFailure(BookrankError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class NoCycleError(BookrankError, ValueError):
    pass


class FitError(BookrankError, ValueError):
    pass


class TrainingError(BookrankError, ValueError):
    pass


class ValidationError(BookrankError, ValueError):
    pass


class ServingError(BookrankError, ValueError):
    pass


class ModelIntegrityError(BookrankError, ValueError):
    pass


class OracleScopeError(BookrankError, ValueError):
    pass


class TemplateError(BookrankError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class UndefinedMetricError(BookrankError, ValueError):
    pass


class NoOverlapError(BookrankError, ValueError):
    pass
